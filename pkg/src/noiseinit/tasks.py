"""Noise-target pretraining and the four single-image task runners.

All runners share one full-batch Adam loop. A trace row ``t`` holds the
loss (and PSNR, when a reference is available) of the parameters *before*
update ``t``; downstream runs also evaluate the final parameters, so
``iterations`` updates give ``iterations + 1`` rows. Pretraining logs only
the pre-update rows, so zero iterations give an empty trace.

Losses are means over all output pixels: ``sum((M*r)*r) / N`` with ``r``
the residual and ``M`` an optional binary mask, so an all-ones mask
reproduces the unmasked loss bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import nets
from .adam import AdamState, adam_step
from .errors import NumericError, ParameterError, ShapeError, UnsupportedConfigurationError
from .nets import CnnSpec, MlpSpec, ParamVector
from .ntk import coordinate_grid
from .tensor import Rng, as_tensor, avg_pool, avg_pool_backward, derive_seeds, sample_gaussian, sample_uniform

PSNR_CAP = 99.0
TASK_KINDS = ("represent", "superres", "denoise", "inpaint")


# --------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class GaussianNoise:
    mean: float = 0.0
    std: float = 1.0

    def sample(self, rng: Rng, shape) -> np.ndarray:
        return sample_gaussian(rng, shape, self.mean, self.std)

    def __str__(self) -> str:
        return f"gaussian:{self.mean:g},{self.std:g}"


@dataclass(frozen=True)
class UniformNoise:
    lo: float = 0.0
    hi: float = 1.0

    def sample(self, rng: Rng, shape) -> np.ndarray:
        return sample_uniform(rng, shape, self.lo, self.hi)

    def __str__(self) -> str:
        return f"uniform:{self.lo:g},{self.hi:g}"


NoiseKind = Union[GaussianNoise, UniformNoise]


def parse_noise(text: str) -> NoiseKind:
    """Parse ``gaussian:MEAN,STD`` or ``uniform:LO,HI``."""
    kind, _, args = text.strip().partition(":")
    try:
        a, b = (float(v) for v in args.split(","))
    except ValueError:
        raise ParameterError(f"bad noise spec {text!r}; expected e.g. gaussian:0,1") from None
    if kind == "gaussian":
        if not b > 0:
            raise ParameterError(f"gaussian std must be > 0 in {text!r}")
        return GaussianNoise(a, b)
    if kind == "uniform":
        if not a < b:
            raise ParameterError(f"uniform range must have lo < hi in {text!r}")
        return UniformNoise(a, b)
    raise ParameterError(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class PretrainConfig:
    noise: NoiseKind = GaussianNoise()
    iterations: int = 200
    lr: float = 1e-4
    resample_each_iter: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError("PretrainConfig.iterations must be >= 0")
        if not self.lr > 0:
            raise ParameterError("PretrainConfig.lr must be > 0")


# pretraining recipes per task (noise, iterations, lr)
PRETRAIN_RECIPES = {
    "represent": (GaussianNoise(0.0, 1.0), 200, 1e-4),
    "superres": (UniformNoise(0.0, 1.0), 500, 1e-2),
    "denoise": (UniformNoise(0.0, 1.0), 1000, 1e-2),
    "inpaint": (UniformNoise(0.0, 1.0), 500, 1e-2),
}


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    target: np.ndarray
    mask: Optional[np.ndarray] = None
    factor: int = 1
    iterations: int = 200
    lr: float = 1e-4
    seed: int = 0
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ParameterError(f"unknown task {self.kind!r}; expected one of {TASK_KINDS}")
        if (self.mask is not None) != (self.kind == "inpaint"):
            raise ParameterError("a mask is required for inpaint and only for inpaint")
        if self.mask is not None:
            _check_mask(self.mask, self.target.shape)
        if self.kind == "superres" and self.factor < 1:
            raise ParameterError("superres factor must be >= 1")
        if self.iterations < 0 or not self.lr > 0:
            raise ParameterError("iterations must be >= 0 and lr > 0")


# --------------------------------------------------------------------------
# traces and metrics


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    loss: float
    psnr: Optional[float] = None


@dataclass
class TrainingTrace:
    reference_kind: str = "target"
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, it: int, loss: float, psnr_value: Optional[float] = None) -> None:
        if self.records and it <= self.records[-1].iter:
            raise ParameterError("trace iterations must be strictly increasing")
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} at iteration {it}")
        self.records.append(TraceRecord(int(it), float(loss), psnr_value))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def iters(self) -> np.ndarray:
        return np.array([r.iter for r in self.records], dtype=int)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([np.nan if r.psnr is None else r.psnr for r in self.records])

    def peak_iter(self) -> Optional[int]:
        """Iteration of the highest PSNR (first one on ties), None without PSNR."""
        vals = self.psnrs
        if vals.size == 0 or np.all(np.isnan(vals)):
            return None
        return int(self.iters[int(np.nanargmax(vals))])

    def psnr_at(self, it: int) -> float:
        for r in self.records:
            if r.iter == it:
                return np.nan if r.psnr is None else r.psnr
        raise KeyError(it)


def mse(a, b) -> float:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    r = a - b
    return float(np.sum(r * r) / r.size)


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    if not peak > 0:
        raise ParameterError("psnr: peak must be > 0")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _trace_psnr(a, b) -> float:
    return min(psnr(a, b, 1.0), PSNR_CAP)


def crossover_iter(baseline: TrainingTrace, candidate: TrainingTrace) -> Optional[int]:
    """First logged iteration at which ``candidate`` PSNR exceeds ``baseline`` PSNR."""
    for a, b in zip(baseline.records, candidate.records):
        if a.iter != b.iter:
            raise ParameterError("traces are not aligned on iterations")
        if a.psnr is not None and b.psnr is not None and b.psnr > a.psnr:
            return a.iter
    return None


def iters_to_reach(trace: TrainingTrace, threshold: float) -> Optional[int]:
    for r in trace.records:
        if r.psnr is not None and r.psnr >= threshold:
            return r.iter
    return None


# --------------------------------------------------------------------------
# losses


def masked_mse(out, target, mask=None) -> tuple[float, np.ndarray]:
    """Mean of ``(M*r)*r`` over all entries and its gradient w.r.t. ``out``."""
    r = out - target
    if mask is not None:
        r = mask * r
    n = r.size
    return float(np.sum(r * r) / n), (2.0 / n) * r


def _check_mask(mask, shape):
    mask = as_tensor(mask)
    if mask.shape != tuple(shape):
        raise ShapeError(f"mask {mask.shape} does not match image {tuple(shape)}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ParameterError("mask must be binary (entries 0 or 1)")
    return mask


# --------------------------------------------------------------------------
# shared loop

Objective = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


def _optimize(spec, params, net_input, objective: Objective, iterations: int, lr: float,
              reference=None, reference_kind="target", final_eval=True, log_every: int = 1):
    state = AdamState.fresh(len(params), lr)
    trace = TrainingTrace(reference_kind=reference_kind)
    last = iterations if final_eval else iterations - 1
    for t in range(iterations + 1):
        if t == iterations and not final_eval:
            break
        out, pullback = nets.vjp(spec, params, net_input)
        loss, g_out, estimate = objective(out)
        if not math.isfinite(loss):
            raise NumericError(f"loss became non-finite at iteration {t}")
        if t % log_every == 0 or t == last:
            value = _trace_psnr(estimate, reference) if reference is not None else None
            trace.append(t, loss, value)
        if t == iterations:
            break
        state, params = adam_step(state, params, pullback(g_out))
    return params, trace


def _image_chw(img) -> np.ndarray:
    img = as_tensor(img)
    if img.ndim == 2:
        return img[None]
    if img.ndim != 3:
        raise ShapeError(f"expected an H×W or C×H×W image, got {img.shape}")
    return img


# --------------------------------------------------------------------------
# pretraining


def pretrain(spec, params0: ParamVector, cfg: PretrainConfig, net_input) -> tuple[ParamVector, TrainingTrace]:
    """Fit the network to a random-noise target; the result is the new initialization."""
    if cfg.iterations == 0:
        return params0.copy(), TrainingTrace(reference_kind="noise")
    rng = Rng(cfg.seed)
    out_shape = nets.forward(spec, params0, net_input).shape
    box = {"eps": cfg.noise.sample(rng, out_shape)}

    def objective(out):
        if out.shape != box["eps"].shape:
            raise ShapeError(f"noise target {box['eps'].shape} does not match output {out.shape}")
        loss, g = masked_mse(out, box["eps"])
        if cfg.resample_each_iter:
            box["eps"] = cfg.noise.sample(rng, out_shape)
        return loss, g, out

    params, trace = _optimize(spec, params0, net_input, objective, cfg.iterations, cfg.lr,
                              reference=None, reference_kind="noise", final_eval=False)
    return params, trace


def noise_target(cfg: PretrainConfig, shape) -> np.ndarray:
    """The (first) noise target that :func:`pretrain` draws for ``cfg``."""
    return cfg.noise.sample(Rng(cfg.seed), shape)


# --------------------------------------------------------------------------
# task runners


def mlp_coords(image_hw) -> np.ndarray:
    return coordinate_grid(*image_hw)


def run_represent(spec, params, image, iterations: int, lr: float, log_every: int = 1):
    if not isinstance(spec, MlpSpec):
        raise UnsupportedConfigurationError("image representation needs a coordinate MLP")
    image = as_tensor(image)
    if image.ndim != 2 or spec.out_dim != 1 or spec.in_dim != 2:
        raise ShapeError("represent: expects a grayscale H×W image and a 2→1 MLP")
    h, w = image.shape
    coords = mlp_coords((h, w))
    target = image.reshape(-1, 1)

    def objective(out):
        loss, g = masked_mse(out, target)
        return loss, g, out

    return _optimize(spec, params, coords, objective, iterations, lr,
                     reference=target, reference_kind="target", log_every=log_every)


def _check_cnn(spec, hw, name):
    if not isinstance(spec, CnnSpec):
        raise UnsupportedConfigurationError(f"{name} needs a convolutional spec")
    if tuple(spec.input_hw) != tuple(hw):
        raise ShapeError(f"{name}: network output {spec.input_hw} does not match {tuple(hw)}")


def run_superres(spec, params, lr_image, factor: int, iterations: int, lr: float,
                 hr_reference=None, net_input=None, seed: int = 0, log_every: int = 1):
    y = _image_chw(lr_image)
    if factor < 1:
        raise ParameterError("superres factor must be >= 1")
    hr_hw = (y.shape[1] * factor, y.shape[2] * factor)
    if not isinstance(spec, CnnSpec) or tuple(spec.input_hw) != hr_hw:
        raise ShapeError(f"superres: network output must be {hr_hw} for factor {factor}")
    if net_input is None:
        net_input = make_net_input(spec, seed)
    ref = None if hr_reference is None else _image_chw(hr_reference)

    def objective(out):
        loss, g = masked_mse(avg_pool(out, factor), y)
        return loss, avg_pool_backward(g, factor), out

    return _optimize(spec, params, net_input, objective, iterations, lr,
                     reference=ref, reference_kind="clean_ground_truth", log_every=log_every)


def run_denoise(spec, params, noisy, iterations: int, lr: float, clean_reference=None,
                net_input=None, seed: int = 0, log_every: int = 1):
    """DIP denoising; the trace's ``peak_iter()`` marks the early-stopping point."""
    y = _image_chw(noisy)
    _check_cnn(spec, y.shape[1:], "denoise")
    if net_input is None:
        net_input = make_net_input(spec, seed)
    ref = y if clean_reference is None else _image_chw(clean_reference)

    def objective(out):
        loss, g = masked_mse(out, y)
        return loss, g, out

    kind = "target" if clean_reference is None else "clean_ground_truth"
    return _optimize(spec, params, net_input, objective, iterations, lr,
                     reference=ref, reference_kind=kind, log_every=log_every)


def run_inpaint(spec, params, corrupted, mask, iterations: int, lr: float, clean_reference=None,
                net_input=None, seed: int = 0, log_every: int = 1):
    y = _image_chw(corrupted)
    m = _check_mask(_image_chw(mask), y.shape)
    _check_cnn(spec, y.shape[1:], "inpaint")
    if net_input is None:
        net_input = make_net_input(spec, seed)
    ref = None if clean_reference is None else _image_chw(clean_reference)

    def objective(out):
        loss, g = masked_mse(out, y, m)
        return loss, g, out

    return _optimize(spec, params, net_input, objective, iterations, lr,
                     reference=ref, reference_kind="clean_ground_truth", log_every=log_every)


def run_task(spec, params, task: TaskSpec, net_input=None, log_every: int = 1):
    if task.kind == "represent":
        return run_represent(spec, params, task.target, task.iterations, task.lr, log_every=log_every)
    if task.kind == "superres":
        return run_superres(spec, params, task.target, task.factor, task.iterations, task.lr,
                            task.reference, net_input, task.seed, log_every)
    if task.kind == "denoise":
        return run_denoise(spec, params, task.target, task.iterations, task.lr, task.reference,
                           net_input, task.seed, log_every)
    return run_inpaint(spec, params, task.target, task.mask, task.iterations, task.lr,
                       task.reference, net_input, task.seed, log_every)


# --------------------------------------------------------------------------
# inputs, seeds and synthetic corruption

NET_INPUT_RANGE = (0.0, 0.1)
DENOISE_SIGMA = 25.0 / 255.0


@dataclass(frozen=True)
class SeedPlan:
    """Child seeds derived from one master seed."""

    init: int
    noise_target: int
    net_input: int
    corruption: int

    @classmethod
    def from_master(cls, master: int) -> "SeedPlan":
        return cls(*derive_seeds(master, 4))


def make_net_input(spec: CnnSpec, seed: int) -> np.ndarray:
    """Fixed C0×H×W uniform-noise input of a DIP network."""
    lo, hi = NET_INPUT_RANGE
    return sample_uniform(Rng(seed), (spec.input_channels, *spec.input_hw), lo, hi)


def network_input(spec, image_hw, seed: int) -> np.ndarray:
    if isinstance(spec, MlpSpec):
        return mlp_coords(image_hw)
    return make_net_input(spec, seed)


def add_gaussian_noise(clean, sigma: float, seed: int) -> np.ndarray:
    noisy = as_tensor(clean) + sample_gaussian(Rng(seed), np.shape(clean), 0.0, sigma)
    return np.clip(noisy, 0.0, 1.0)


def rect_mask(hw, rects) -> np.ndarray:
    """Binary mask with zeros inside each ``(top, left, height, width)`` rectangle."""
    m = np.ones(hw)
    for top, left, height, width in rects:
        m[top : top + height, left : left + width] = 0.0
    return m


def default_rects(hw) -> list[tuple[int, int, int, int]]:
    h, w = hw
    return [(h // 4, w // 8, h // 8, w // 3), (h // 2, w // 2, h // 4, w // 8)]
