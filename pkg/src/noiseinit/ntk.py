"""Empirical neural tangent kernel and its spectral diagnostics.

The kernel on probe inputs x_1..x_n is ``K = J J^T`` where row i of J is the
parameter gradient of the scalar network output at x_i. Spectra are sorted
descending. Diagnostics:

* ``decay_ratio``     lambda_1 / lambda_k
* ``effective_rank``  exp(entropy of lambda / sum(lambda))
* ``band_width``      mean per-row count of |K_ij| >= K_ii / 2
* ``eigvec_spectrum`` centred 2D DFT power image of an eigenvector laid out
  on the probe grid, and ``freq_centroid`` its power-weighted mean radius
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import NumericError, ParameterError, ResourceError, ShapeError
from .tensor import as_tensor

DEFAULT_PROBE_CAP = 4096
DECAY_KS = (10, 50, 100)
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class KernelMatrix:
    k: np.ndarray
    grid_shape: tuple[int, int]

    def __post_init__(self):
        n = self.k.shape[0]
        h, w = self.grid_shape
        if self.k.shape != (n, n) or h * w != n:
            raise ShapeError(f"kernel {self.k.shape} does not match grid {self.grid_shape}")

    @property
    def n(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class NtkSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grid_shape: tuple[int, int]

    @property
    def n(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class SpectralReport:
    decay_ratios: dict[int, float]
    effective_rank: float
    band_width: float
    eigvec_freq_centroids: np.ndarray


# --------------------------------------------------------------------------
# probe grids


def coordinate_grid(h: int, w: int) -> np.ndarray:
    """Pixel-centre coordinates on [-1, 1]^2 in raster order, columns (row, col)."""
    rows = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    cols = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def probe_grid(train_hw: tuple[int, int], probe_hw: tuple[int, int]) -> np.ndarray:
    """Regular sub-grid of the training coordinate grid, every (train/probe)-th pixel."""
    th, tw = train_hw
    ph, pw = probe_hw
    if th % ph or tw % pw:
        raise ShapeError(f"probe grid {probe_hw} does not evenly subsample {train_hw}")
    full = coordinate_grid(th, tw).reshape(th, tw, 2)
    return full[:: th // ph, :: tw // pw].reshape(-1, 2)


# --------------------------------------------------------------------------
# kernel and eigendecomposition


def compute_ntk(spec, params, probes, grid_shape=None, cap: int = DEFAULT_PROBE_CAP) -> KernelMatrix:
    probes = as_tensor(probes)
    if probes.ndim != 2:
        raise ShapeError(f"probes must be n×d, got {probes.shape}")
    n = probes.shape[0]
    if n > cap:
        raise ResourceError(f"{n} probes exceed the probe cap of {cap}")
    if grid_shape is None:
        grid_shape = (1, n)
    J = nets.jacobian(spec, params, probes)
    k = J @ J.T
    k = 0.5 * (k + k.T)
    return KernelMatrix(k, tuple(grid_shape))


def _sorted_spectrum(vals, vecs, grid_shape) -> NtkSpectrum:
    order = np.argsort(-vals, kind="stable")
    return NtkSpectrum(vals[order].copy(), vecs[:, order].copy(), tuple(grid_shape))


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # tournament schedule: every pair of 0..m-1 meets exactly once over m-1 rounds
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array([players[i] for i in range(m // 2)])
        q = np.array([players[m - 1 - i] for i in range(m // 2)])
        rounds.append((p, q))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Sweeps visit every off-diagonal pair once using a round-robin ordering in
    which each round rotates n/2 disjoint pairs at once. Iterates until the
    off-diagonal Frobenius norm is below ``tol * ||a||_F``.

    Returns unsorted ``(eigenvalues, eigenvectors)`` with eigenvectors as
    columns. Raises :class:`NumericError` after ``max_sweeps`` sweeps.
    """
    A = as_tensor(a).copy()
    n = A.shape[0]
    if A.shape != (n, n):
        raise ShapeError(f"jacobi_eigh needs a square matrix, got {A.shape}")
    V = np.eye(n)
    if n < 2:
        return np.diag(A).copy(), V
    m = n + (n % 2)
    pad = m != n
    if pad:
        A = np.pad(A, ((0, 1), (0, 1)))
        V = np.eye(m)
    scale = np.linalg.norm(A)
    target = tol * scale

    def off(A):
        return np.linalg.norm(A - np.diag(np.diag(A)))

    rounds = _round_robin(m)
    for _ in range(max_sweeps):
        if off(A) <= target:
            break
        for p, q in rounds:
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            active = np.abs(apq) > 0.0
            if not active.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # A <- G^T A G, applied to columns then rows
            Ap, Aq = A[:, p], A[:, q]
            A[:, p], A[:, q] = c * Ap - s * Aq, s * Ap + c * Aq
            Ap, Aq = A[p, :], A[q, :]
            A[p, :], A[q, :] = c[:, None] * Ap - s[:, None] * Aq, s[:, None] * Ap + c[:, None] * Aq
            Vp, Vq = V[:, p], V[:, q]
            V[:, p], V[:, q] = c * Vp - s * Vq, s * Vp + c * Vq
    else:
        residual = off(A)
        if residual > target:
            raise NumericError(
                f"Jacobi did not converge in {max_sweeps} sweeps: "
                f"off-diagonal norm {residual:.3e} > {target:.3e}"
            )
    if pad:
        A = A[:n, :n]
        V = V[:n, :n]
    return np.diag(A).copy(), V


def eigendecompose(kernel: KernelMatrix, method: str = "lapack") -> NtkSpectrum:
    """Symmetric eigendecomposition, eigenvalues sorted descending.

    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``method="jacobi"`` uses
    :func:`jacobi_eigh` (slow beyond a few hundred probes).
    """
    k = kernel.k
    asym = np.max(np.abs(k - k.T)) if k.size else 0.0
    if k.size and asym > 1e-10 * np.max(np.abs(k)):
        raise ParameterError(f"kernel is not symmetric (max |K - K^T| = {asym:.3e})")
    if method == "lapack":
        vals, vecs = np.linalg.eigh(k)
    elif method == "jacobi":
        vals, vecs = jacobi_eigh(k)
    else:
        raise ParameterError(f"unknown eigensolver {method!r}")
    return _sorted_spectrum(vals, vecs, kernel.grid_shape)


def reconstruction_error(kernel: KernelMatrix, spectrum: NtkSpectrum) -> float:
    U, lam = spectrum.eigenvectors, spectrum.eigenvalues
    denom = np.linalg.norm(kernel.k)
    return float(np.linalg.norm(kernel.k - (U * lam) @ U.T) / denom) if denom else 0.0


def orthonormality_error(spectrum: NtkSpectrum) -> float:
    U = spectrum.eigenvectors
    return float(np.max(np.abs(U.T @ U - np.eye(U.shape[1])))) if U.size else 0.0


# --------------------------------------------------------------------------
# diagnostics


def decay_ratio(spectrum: NtkSpectrum, k: int) -> tuple[float, bool]:
    """``(lambda_1 / lambda_k, ok)``; ``ok`` is False and the ratio +inf if lambda_k <= 0."""
    if not 1 <= k <= spectrum.n:
        raise ParameterError(f"k={k} outside 1..{spectrum.n}")
    lam_k = spectrum.eigenvalues[k - 1]
    if lam_k <= 0:
        return math.inf, False
    return float(spectrum.eigenvalues[0] / lam_k), True


def effective_rank(spectrum: NtkSpectrum) -> float:
    lam = np.clip(spectrum.eigenvalues, 0.0, None)
    total = lam.sum()
    if not total > 0:
        raise ParameterError("effective_rank: spectrum has no positive mass")
    p = lam[lam > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def band_width(kernel) -> float:
    k = kernel.k if isinstance(kernel, KernelMatrix) else as_tensor(kernel)
    d = np.diag(k)
    if np.any(d <= 0):
        raise NumericError("band_width: kernel has a non-positive diagonal entry")
    counts = np.sum(np.abs(k) >= 0.5 * d[:, None], axis=1)
    return float(counts.mean())


def _dft_matrix(n: int) -> np.ndarray:
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


def dft2(x) -> np.ndarray:
    """Direct (matrix-product) 2D DFT, same convention as ``numpy.fft.fft2``."""
    x = as_tensor(x)
    h, w = x.shape
    return _dft_matrix(h) @ x @ _dft_matrix(w).T


def _centre(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    return np.roll(a, (h // 2, w // 2), axis=(0, 1))


def eigvec_spectrum(spectrum: NtkSpectrum, index: int) -> np.ndarray:
    """Centred |DFT|^2 of eigenvector ``index`` (0-based) on the probe grid; DC at (h//2, w//2)."""
    if not 0 <= index < spectrum.n:
        raise ParameterError(f"eigenvector index {index} outside 0..{spectrum.n - 1}")
    h, w = spectrum.grid_shape
    u = spectrum.eigenvectors[:, index].reshape(h, w)
    return _centre(np.abs(dft2(u)) ** 2)


def radial_frequency(h: int, w: int) -> np.ndarray:
    """Radius of each centred DFT bin, in cycles per grid side."""
    fy = np.arange(h) - h // 2
    fx = np.arange(w) - w // 2
    return np.hypot(fy[:, None], fx[None, :])


def freq_centroid(power) -> float:
    power = as_tensor(power)
    if np.any(power < 0):
        raise ParameterError("freq_centroid: power image has negative entries")
    total = power.sum()
    if not total > 0:
        raise ParameterError("freq_centroid: power image is all zero")
    return float(np.sum(power * radial_frequency(*power.shape)) / total)


def mode_centroids(spectrum: NtkSpectrum, count: int | None = None) -> np.ndarray:
    count = spectrum.n if count is None else min(count, spectrum.n)
    return np.array([freq_centroid(eigvec_spectrum(spectrum, i)) for i in range(count)])


def spectral_report(kernel: KernelMatrix, spectrum: NtkSpectrum, ks=DECAY_KS, centroid_modes=None) -> SpectralReport:
    ratios = {}
    for k in ks:
        if k <= spectrum.n:
            ratios[k] = decay_ratio(spectrum, k)[0]
    return SpectralReport(
        decay_ratios=ratios,
        effective_rank=effective_rank(spectrum),
        band_width=band_width(kernel),
        eigvec_freq_centroids=mode_centroids(spectrum, centroid_modes),
    )


def analyze(spec, params, probes, grid_shape, method: str = "lapack", cap: int = DEFAULT_PROBE_CAP, centroid_modes=None):
    """Kernel, spectrum and report in one call."""
    kernel = compute_ntk(spec, params, probes, grid_shape, cap=cap)
    spectrum = eigendecompose(kernel, method=method)
    return kernel, spectrum, spectral_report(kernel, spectrum, centroid_modes=centroid_modes)
