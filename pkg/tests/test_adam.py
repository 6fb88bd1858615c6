import math

import numpy as np
import pytest

from noiseinit.adam import AdamState, adam_step
from noiseinit.errors import ShapeError
from noiseinit.nets import ParamVector, Slot

LAYOUT1 = (Slot("theta", (1,), 0),)

# theta_t for f(theta) = theta^2, theta_0 = 1, lr 0.1, default betas/eps,
# stepped by hand with plain-float arithmetic (see scalar_adam below)
SQUARE_TABLE = [
    0.9000000005,
    0.8004122286917928,
    0.7015862729460303,
    0.603939060573746,
    0.507963659264342,
]


def scalar_adam(theta, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


def pv(values):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return ParamVector(values, (Slot("theta", values.shape, 0),))


class TestAdam:
    def test_zero_gradient(self):
        p = pv([1.0, -2.0, 3.0])
        state, q = adam_step(AdamState.fresh(3, 0.1), p, pv([0.0, 0.0, 0.0]))
        assert np.array_equal(q.values, p.values)
        assert state.t == 1

    def test_first_step_is_lr(self):
        state, q = adam_step(AdamState.fresh(1, 0.01), pv(0.5), pv(1.0))
        assert q.values[0] - 0.5 == pytest.approx(-0.01, rel=1e-7)
        assert state.m[0] == pytest.approx(0.1) and state.v[0] == pytest.approx(0.001)

    def test_square_trajectory(self):
        assert scalar_adam(1.0, 5, 0.1) == pytest.approx(SQUARE_TABLE, abs=1e-15)
        state, p = AdamState.fresh(1, 0.1), pv(1.0)
        got = []
        for _ in range(5):
            state, p = adam_step(state, p, pv(2 * p.values))
            got.append(p.values[0])
        assert got == pytest.approx(SQUARE_TABLE, abs=1e-15)

    def test_zero_lr_identity(self):
        p = pv(np.linspace(-1, 1, 6))
        state = AdamState.fresh(6, 0.0)
        for _ in range(3):
            state, p2 = adam_step(state, p, pv(np.ones(6)))
            assert p2.values.tobytes() == p.values.tobytes()
        assert state.t == 3 and np.all(state.v >= 0)

    def test_inputs_untouched(self):
        state, p, g = AdamState.fresh(2, 0.1), pv([1.0, 2.0]), pv([0.5, -0.5])
        adam_step(state, p, g)
        assert state.t == 0 and not state.m.any() and list(p.values) == [1.0, 2.0]

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState.fresh(2, 0.1), pv([1.0, 2.0]), pv([1.0]))
