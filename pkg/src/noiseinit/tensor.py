"""Dense float64 kernels and seeded sampling.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The kernels
here validate shapes and return fresh arrays; none of them mutate inputs.

Random numbers come from :class:`Rng`, a thin wrapper over numpy's PCG64
bit generator. PCG64 output for a given seed is fixed by numpy's stability
policy and is identical across platforms, so traces are reproducible.
Normal variates use numpy's ziggurat transform (``standard_normal``).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError

__all__ = [
    "Rng",
    "derive_seeds",
    "as_tensor",
    "matmul",
    "conv2d",
    "conv2d_cols",
    "conv2d_backward",
    "avg_pool",
    "avg_pool_backward",
    "upsample_nearest",
    "upsample_nearest_backward",
    "sample_gaussian",
    "sample_uniform",
]


class Rng:
    """Single-owner random stream seeded from a 64-bit integer.

    Do not share one instance across threads; use :meth:`spawn` to split.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, n: int) -> list["Rng"]:
        return [Rng(s) for s in derive_seeds(self.seed, n)]

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def derive_seeds(master: int, n: int) -> list[int]:
    """Derive ``n`` independent child seeds from ``master`` via SeedSequence."""
    state = np.random.SeedSequence(int(master)).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def _im2col(xp: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    # xp is already padded: (C, Hp, Wp) -> (C*k*k, Ho*Wo)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return cols, ho, wo


def _check_conv(x: np.ndarray, kernels: np.ndarray, stride: int, padding: int) -> int:
    if x.ndim != 3:
        raise ShapeError(f"conv2d: input must be C×H×W, got {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"conv2d: kernels must be F×C×k×k, got {kernels.shape}")
    if kernels.shape[1] != x.shape[0]:
        raise ShapeError(
            f"conv2d: kernel channels {kernels.shape[1]} != input channels {x.shape[0]}"
        )
    if stride not in (1, 2):
        raise ParameterError(f"conv2d: stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ParameterError(f"conv2d: padding must be >= 0, got {padding}")
    k = kernels.shape[2]
    if k > x.shape[1] + 2 * padding or k > x.shape[2] + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {k}×{k} larger than padded input "
            f"{x.shape[1] + 2 * padding}×{x.shape[2] + 2 * padding}"
        )
    return k


def conv2d(x, kernels, stride: int = 1, padding: int = 1) -> np.ndarray:
    """Cross-correlation (no kernel flip) of a C×H×W input with F×C×k×k kernels.

    Output spatial size is ``(H + 2*padding - k) // stride + 1``.
    """
    return conv2d_cols(x, kernels, stride, padding)[0]


def conv2d_cols(x, kernels, stride: int = 1, padding: int = 1):
    """:func:`conv2d` that also returns the im2col matrix for reuse in the backward pass."""
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    k = _check_conv(x, kernels, stride, padding)
    cols, ho, wo = _im2col(_pad(x, padding), k, stride)
    f = kernels.shape[0]
    return (kernels.reshape(f, -1) @ cols).reshape(f, ho, wo), cols


def conv2d_backward(x, kernels, grad_out, stride: int = 1, padding: int = 1, cols=None):
    """Adjoint of :func:`conv2d`; returns ``(grad_input, grad_kernels)``.

    ``cols`` may be the im2col matrix from :func:`conv2d_cols` on the same input.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    k = _check_conv(x, kernels, stride, padding)
    c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if cols is None:
        cols = _im2col(_pad(x, padding), k, stride)[0]
    f = kernels.shape[0]
    if grad_out.shape != (f, ho, wo):
        raise ShapeError(f"conv2d_backward: grad {grad_out.shape} != output {(f, ho, wo)}")
    g = grad_out.reshape(f, ho * wo)
    grad_k = (g @ cols.T).reshape(kernels.shape)
    gcols = (kernels.reshape(f, -1).T @ g).reshape(c, k, k, ho, wo)
    if k == 1 and stride == 1 and padding == 0:
        return gcols.reshape(c, h, w), grad_k
    gxp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            gxp[:, i : i + span_h : stride, j : j + span_w : stride] += gcols[:, i, j]
    if padding:
        gxp = gxp[:, padding:-padding, padding:-padding]
    return gxp, grad_k


def _as_chw(x: np.ndarray, name: str) -> np.ndarray:
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ShapeError(f"{name}: expected H×W or C×H×W, got {x.shape}")
    return x


def avg_pool(x, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor``×``factor`` blocks. Accepts H×W or C×H×W."""
    x = as_tensor(x)
    squeeze = x.ndim == 2
    x3 = _as_chw(x, "avg_pool")
    if factor < 1:
        raise ParameterError(f"avg_pool: factor must be >= 1, got {factor}")
    c, h, w = x3.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool: factor {factor} does not divide {h}×{w}")
    if factor == 1:
        out = x3.copy()
    else:
        out = x3.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return out[0] if squeeze else out


def avg_pool_backward(grad_out, factor: int) -> np.ndarray:
    grad_out = as_tensor(grad_out)
    if factor == 1:
        return grad_out.copy()
    g = grad_out / (factor * factor)
    return np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1)


def upsample_nearest(x, factor: int = 2) -> np.ndarray:
    x = as_tensor(x)
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def upsample_nearest_backward(grad_out, factor: int = 2) -> np.ndarray:
    grad_out = as_tensor(grad_out)
    *lead, h, w = grad_out.shape
    return grad_out.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1))


def _shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def sample_gaussian(rng: Rng, shape: int | Sequence[int], mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if not std > 0:
        raise ParameterError(f"sample_gaussian: std must be > 0, got {std}")
    z = rng.generator.standard_normal(_shape(shape))
    return mean + std * z


def sample_uniform(rng: Rng, shape: int | Sequence[int], lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """I.i.d. samples on ``[lo, hi)``."""
    if not lo < hi:
        raise ParameterError(f"sample_uniform: need lo < hi, got lo={lo}, hi={hi}")
    u = rng.generator.random(_shape(shape))
    x = lo + (hi - lo) * u
    # rounding in lo + (hi-lo)*u can land exactly on hi
    return np.minimum(x, np.nextafter(hi, lo))
