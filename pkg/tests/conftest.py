import numpy as np
import pytest

from noiseinit import nets
from noiseinit.tensor import Rng


def central_fd(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # coordinates whose true gradient is ~0 are compared against a small floor
    # proportional to the gradient scale; FD roundoff dominates there
    floor = 1e-4 * np.max(np.abs(analytic))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def small_mlp():
    spec = nets.MlpSpec(in_dim=2, hidden_dim=8, num_hidden_layers=2, out_dim=1, omega0=30.0)
    return spec, nets.init_params(spec, Rng(3))


@pytest.fixture
def small_cnn():
    spec = nets.CnnSpec(input_channels=2, input_hw=(8, 8), encoder_channels=(3, 4),
                        decoder_channels=(4, 3), skip_channels=2, output_channels=1)
    return spec, nets.init_params(spec, Rng(0))


# criterion number -> one-line verdict, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}
ACCEPTANCE_COUNT = 11


def record_verdict(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {title} ({detail})"
    ACCEPTANCE[num] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, ACCEPTANCE_COUNT + 1):
        line = ACCEPTANCE.get(num, f"criterion {num:2d}: NOT RUN (deselected or errored before a verdict)")
        terminalreporter.write_line(line)
