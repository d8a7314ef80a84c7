"""Dense matrix kernels used by the compressor.

Matrices are plain 2-D ``float64`` numpy arrays. ``full_svd`` is the exact
reference factorization; ``randomized_svd`` is the range-finder variant
(Gaussian sketch, power iterations with re-orthonormalization) used on the
hot path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, RankRequestTooLarge
from .seeding import derive_rng

# singular values below this fraction of the largest are reported as zero
RANK_TOL = 1e-10

DEFAULT_OVERSAMPLE = 8
DEFAULT_POWER_ITERS = 2


@dataclass(frozen=True)
class TruncatedSvd:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def r(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def nonzero_rank(self) -> int:
        return int(np.count_nonzero(self.sigma))

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt

    def coefficients(self) -> np.ndarray:
        """Rows of diag(sigma) @ vt, i.e. u.T @ a for the factored matrix."""
        return self.sigma[:, None] * self.vt


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip factor pairs so each column of ``u`` has a non-negative dominant entry.

    The dominant entry is the first one of largest magnitude. Flipping a
    column of ``u`` together with the matching row of ``vt`` leaves the
    product unchanged.
    """
    if u.shape[1] == 0:
        return u, vt
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivots, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs, vt * signs[:, None]


def _zero_small(sigma: np.ndarray) -> np.ndarray:
    sigma = sigma.copy()
    if sigma.size == 0:
        return sigma
    top = sigma[0]
    if top <= 0.0:
        sigma[:] = 0.0
    else:
        sigma[sigma < RANK_TOL * top] = 0.0
    return sigma


def full_svd(a) -> TruncatedSvd:
    """Exact thin SVD with r = min(rows, cols) and deterministic signs."""
    a = as_matrix(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u, vt = fix_signs(u, vt)
    return TruncatedSvd(u=u, sigma=s, vt=vt)


def randomized_svd(
    a,
    d: int,
    oversample: int = DEFAULT_OVERSAMPLE,
    power_iters: int = DEFAULT_POWER_ITERS,
    seed: int = 0,
) -> TruncatedSvd:
    """Approximate top-``d`` SVD by randomized range finding.

    A Gaussian test matrix with ``d + oversample`` columns (capped at the
    smaller dimension) sketches the range of ``a``; each power iteration
    applies ``a.T`` then ``a`` with a QR in between to keep the sketch
    well conditioned. The small projected matrix is factored exactly.

    Singular values below ``RANK_TOL * sigma[0]`` are returned as exact
    zeros; callers that need only informative directions should drop those
    columns. Results are bit-identical for a fixed ``seed``.
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if d < 1:
        raise ValueError(f"rank request must be positive, got {d}")
    if d > min(rows, cols):
        raise RankRequestTooLarge(f"d={d} exceeds min{a.shape}")
    if oversample < 0 or power_iters < 0:
        raise ValueError("oversample and power_iters must be non-negative")

    p = min(d + oversample, rows, cols)
    rng = derive_rng(seed)
    omega = rng.standard_normal((cols, p))
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(power_iters):
        z, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ z)

    ub, s, vt = np.linalg.svd(q.T @ a, full_matrices=False)
    u = q @ ub[:, :d]
    u, vt = fix_signs(u, vt[:d])
    return TruncatedSvd(u=u, sigma=_zero_small(s[:d]), vt=vt)


def orthonormality_defect(m) -> float:
    """Frobenius norm of ``m.T @ m - I``."""
    m = np.asarray(m, dtype=np.float64)
    gram = m.T @ m
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


def truncation_error(a, svd: TruncatedSvd, r: int | None = None) -> float:
    """Frobenius error of the rank-``r`` reconstruction from ``svd``."""
    r = svd.r if r is None else r
    approx = (svd.u[:, :r] * svd.sigma[:r]) @ svd.vt[:r]
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - approx))
