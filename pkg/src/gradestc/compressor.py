"""Client-side low-rank gradient compressor with incremental basis replacement.

Each (client, layer) stream owns a :class:`BasisState`. The first call
factors the segmented gradient and ships the whole top-k basis. Later calls
project onto the kept basis, factor the fitting error to get candidate
directions, and swap out the basis columns whose coefficient rows carry
the least energy.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DimensionMismatch, ModeChangeAfterStart, NoSignal, RankRequestTooLarge
from .seeding import TAG_RSVD, derive_seed

DEFAULT_ALPHA = 1.3
DEFAULT_BETA = 1.0

# a fitting error below this fraction of ||G|| is rounding noise, not signal
RESIDUAL_TOL = 1e-12


class AblationMode(str, enum.Enum):
    FULL = "full"
    FIRST_ONLY = "first_only"
    REPLACE_ALL = "replace_all"
    FIXED_D = "fixed_d"


@dataclass
class BasisState:
    l: int
    k: int
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    seed: int = 0
    oversample: int = linalg.DEFAULT_OVERSAMPLE
    power_iters: int = linalg.DEFAULT_POWER_ITERS
    mode: AblationMode = AblationMode.FULL
    d: int = 0
    m_basis: np.ndarray | None = None
    initialized: bool = False
    round_counter: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.l:
            raise RankRequestTooLarge(f"need 1 <= k <= l, got k={self.k}, l={self.l}")
        self.mode = AblationMode(self.mode)
        if self.d == 0:
            self.d = self.k
        if not 1 <= self.d <= self.k:
            raise ValueError(f"need 1 <= d <= k, got d={self.d}, k={self.k}")

    def rsvd_seed(self) -> int:
        """Seed of the randomized SVD for the upcoming call."""
        return derive_seed(self.seed, TAG_RSVD, self.round_counter)


@dataclass
class CompressResult:
    """What one compress call produced.

    ``replace_indices`` are 1-based basis columns that were overwritten, in
    increasing order; ``new_vectors`` holds the replacement columns as rows,
    aligned with ``replace_indices``. ``coefficients`` is the post-replacement
    k x m coefficient matrix. ``d_probed`` is the number of error directions
    requested this round (the per-round term of the sum-of-d cost metric).
    """

    replace_indices: np.ndarray
    new_vectors: np.ndarray
    coefficients: np.ndarray
    d_probed: int
    no_signal: bool = False
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def d_replaced(self) -> int:
        return int(self.replace_indices.shape[0])


def next_candidate_count(d_replaced: int, alpha: float, beta: float, k: int) -> int:
    """clamp(round_half_up(alpha * d_replaced + beta), 1, k)."""
    raw = int(np.floor(alpha * d_replaced + beta + 0.5))
    return max(1, min(raw, k))


def select_top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest scores.

    Ties go to the lower stacked index, so incumbents (indices < k) beat
    candidates and earlier rows beat later ones within each group.
    """
    order = np.argsort(-scores, kind="stable")
    keep = np.zeros(scores.shape[0], dtype=bool)
    keep[order[:k]] = True
    return keep


def ablation_mode(state: BasisState, mode: AblationMode | str) -> None:
    if state.initialized or state.round_counter > 0:
        raise ModeChangeAfterStart("ablation mode must be set before the first compress call")
    state.mode = AblationMode(mode)
    if state.mode is AblationMode.FIXED_D:
        state.d = state.k


def _check_input(state: BasisState, g_matrix) -> np.ndarray:
    g = linalg.as_matrix(g_matrix, "gradient matrix")
    if g.shape[0] != state.l:
        raise DimensionMismatch(f"gradient matrix has {g.shape[0]} rows, state expects l={state.l}")
    return g


def _empty(state: BasisState, m: int, d_probed: int, no_signal: bool = False) -> CompressResult:
    return CompressResult(
        replace_indices=np.zeros(0, dtype=np.int64),
        new_vectors=np.zeros((0, state.l)),
        coefficients=np.zeros((state.k, m)),
        d_probed=d_probed,
        no_signal=no_signal,
    )


def _factor_full(state: BasisState, g: np.ndarray) -> CompressResult:
    if state.k > min(g.shape):
        raise RankRequestTooLarge(f"k={state.k} exceeds min{g.shape}")
    if not np.any(g):
        raise NoSignal("cannot initialize a basis from an all-zero gradient")
    svd = linalg.randomized_svd(g, state.k, state.oversample, state.power_iters, state.rsvd_seed())
    state.m_basis = svd.u.copy()
    state.d = state.k
    state.initialized = True
    return CompressResult(
        replace_indices=np.arange(1, state.k + 1, dtype=np.int64),
        new_vectors=svd.u.T.copy(),
        coefficients=svd.coefficients(),
        d_probed=state.k,
    )


def init_basis(state: BasisState, g_matrix) -> CompressResult:
    """First-round factorization: M = top-k left singular vectors of G."""
    if state.initialized:
        raise ValueError("basis already initialized")
    g = _check_input(state, g_matrix)
    result = _factor_full(state, g)
    state.round_counter += 1
    return result


def error_candidates(state: BasisState, error: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Candidate basis columns from the fitting error and their coefficients.

    Returns ``(m_e, a_e)`` with ``m_e`` of shape (l, d') where d' <= d counts
    the error directions with non-zero singular value.
    """
    m = state.m_basis
    if np.linalg.norm(error) <= RESIDUAL_TOL * np.linalg.norm(g):
        return np.zeros((state.l, 0)), np.zeros((0, g.shape[1]))
    d = min(state.d, min(error.shape))
    svd = linalg.randomized_svd(error, d, state.oversample, state.power_iters, state.rsvd_seed())
    m_e = svd.u[:, svd.sigma > 0]
    if m_e.shape[1]:
        # exact arithmetic gives M^T M_e = 0; scrub the rounding residue
        m_e = m_e - m @ (m.T @ m_e)
        q, r = np.linalg.qr(m_e)
        m_e = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return m_e, m_e.T @ g


def compress(state: BasisState, g_matrix) -> CompressResult:
    g = _check_input(state, g_matrix)
    if not state.initialized:
        return init_basis(state, g)

    if not np.any(g):
        state.round_counter += 1
        probed = 0 if state.mode is AblationMode.FIRST_ONLY else state.d
        return _empty(state, g.shape[1], probed, no_signal=True)

    if state.mode is AblationMode.REPLACE_ALL:
        result = _factor_full(state, g)
        state.round_counter += 1
        return result

    m = state.m_basis
    a = m.T @ g
    if state.mode is AblationMode.FIRST_ONLY:
        state.round_counter += 1
        result = _empty(state, g.shape[1], d_probed=0)
        result.coefficients = a
        return result

    d_probed = state.d
    m_e, a_e = error_candidates(state, g - m @ a, g)
    scores = np.concatenate([np.sum(a * a, axis=1), np.sum(a_e * a_e, axis=1)])
    keep = select_top_k(scores, state.k)
    dropped = np.flatnonzero(~keep[: state.k])
    chosen = np.flatnonzero(keep[state.k :])

    if dropped.size:
        m = m.copy()
        m[:, dropped] = m_e[:, chosen]
        a[dropped] = a_e[chosen]
        state.m_basis = m

    if state.mode is AblationMode.FIXED_D:
        state.d = state.k
    else:
        state.d = next_candidate_count(dropped.size, state.alpha, state.beta, state.k)
    state.round_counter += 1
    return CompressResult(
        replace_indices=(dropped + 1).astype(np.int64),
        new_vectors=m_e[:, chosen].T.copy(),
        coefficients=a,
        d_probed=d_probed,
        scores=scores,
    )


def local_reconstruction(state: BasisState, result: CompressResult) -> np.ndarray:
    """Compressor-side M @ A after the call, in full precision."""
    return state.m_basis @ result.coefficients


def wire_reconstruction(state: BasisState, result: CompressResult) -> np.ndarray:
    """Compressor-side M @ A with both factors rounded through float32.

    This is exactly what the paired decompressor computes.
    """
    m32 = state.m_basis.astype(np.float32).astype(np.float64)
    a32 = result.coefficients.astype(np.float32).astype(np.float64)
    return m32 @ a32
