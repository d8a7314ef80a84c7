"""Server-side mirror of one compressor stream.

The mirror keeps its own copy of the basis, patched column-by-column from
each payload, and rebuilds the layer gradient as ``M @ A``. Basis columns
are stored as the float32 values that crossed the wire, so the mirror equals
the float32 rounding of the client basis after every payload.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IndexOutOfRange,
    LengthMismatch,
    OutOfOrderPayload,
    UninitializedStream,
)
from .linalg import orthonormality_defect
from .reshape import GradientTensor, SegmentSpec, restore
from .wire import UplinkPayload

DEBUG_ORTHO_TOL = 1e-5


@dataclass
class MirrorState:
    spec: SegmentSpec
    layer_shape: tuple[int, ...]
    k: int
    layer_name: str = ""
    m_basis: np.ndarray | None = None
    initialized: bool = False
    next_seq: int | None = None
    check_orthonormal: bool = False
    last_defect: float | None = field(default=None, repr=False)

    @property
    def l(self) -> int:
        return self.spec.l


def apply_payload(state: MirrorState, payload: UplinkPayload) -> np.ndarray:
    """Patch the basis from ``payload`` and return the reconstructed l x m matrix."""
    if state.next_seq is not None and payload.seq != state.next_seq:
        raise OutOfOrderPayload(f"expected seq {state.next_seq}, got {payload.seq}")
    if payload.k != state.k or payload.m != state.spec.m:
        raise LengthMismatch(
            f"payload coefficients are {payload.k}x{payload.m}, stream expects {state.k}x{state.spec.m}"
        )
    p = payload.d_replaced
    if p and payload.l != state.l:
        raise LengthMismatch(f"basis vectors have length {payload.l}, stream expects l={state.l}")
    indices = payload.replace_indices.astype(np.int64)
    if p and (indices.min() < 1 or indices.max() > state.k or np.any(np.diff(indices) <= 0)):
        raise IndexOutOfRange(f"replacement indices {indices.tolist()} invalid for k={state.k}")

    if not state.initialized:
        if p == 0 and not np.any(payload.coefficients):
            # no-signal payload ahead of the first basis
            state.next_seq = payload.seq + 1
            return np.zeros((state.l, state.spec.m))
        if p != state.k:
            raise UninitializedStream("first payload of a stream must carry the full basis")
        state.m_basis = np.zeros((state.l, state.k))
        state.initialized = True

    if p:
        state.m_basis[:, indices - 1] = payload.new_vectors.astype(np.float64).T
        if state.check_orthonormal:
            state.last_defect = orthonormality_defect(state.m_basis)
            if state.last_defect > DEBUG_ORTHO_TOL:
                raise ValueError(f"mirror basis lost orthonormality: defect {state.last_defect:.3e}")
    state.next_seq = payload.seq + 1
    return state.m_basis @ payload.coefficients.astype(np.float64)


def decompress(state: MirrorState, payload: UplinkPayload) -> GradientTensor:
    g_hat = apply_payload(state, payload)
    return restore(g_hat, state.spec, state.layer_shape, state.layer_name)
