"""Gradient tensor <-> segmented matrix conversion.

4-D kernels are described in (W, H, D, C) order and flattened with W
varying fastest. Everything else is flattened in natural row-major order.
The flat vector is cut into consecutive length-``l`` columns; a ragged tail
is zero-padded and the pad length remembered so ``restore`` can drop it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeMismatch


@dataclass
class GradientTensor:
    layer_name: str
    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if any(s < 1 for s in self.shape):
            raise ShapeMismatch(f"{self.layer_name}: dimensions must be positive, got {self.shape}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != math.prod(self.shape):
            raise ShapeMismatch(
                f"{self.layer_name}: {values.size} values do not fill shape {self.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"{self.layer_name}: gradient contains NaN or Inf")
        self.values = values.reshape(self.shape)

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class SegmentSpec:
    n: int
    l: int
    m: int
    pad: int

    @classmethod
    def for_length(cls, n: int, l: int) -> "SegmentSpec":
        if l < 1 or n < 1:
            raise ValueError(f"need n >= 1 and l >= 1, got n={n}, l={l}")
        m = -(-n // l)
        return cls(n=n, l=l, m=m, pad=l * m - n)


def _order(ndim: int) -> str:
    # W is axis 0 of a (W, H, D, C) shape; column-major makes it fastest
    return "F" if ndim == 4 else "C"


def flatten_whdc(t: GradientTensor) -> np.ndarray:
    return t.values.ravel(order=_order(t.values.ndim)).copy()


def unflatten_whdc(g: np.ndarray, shape, layer_name: str = "") -> GradientTensor:
    shape = tuple(int(s) for s in shape)
    values = np.asarray(g, dtype=np.float64).reshape(shape, order=_order(len(shape)))
    return GradientTensor(layer_name, shape, values)


def segment(g, l: int) -> tuple[np.ndarray, SegmentSpec]:
    """Column ``j`` of the result holds ``g[j*l:(j+1)*l]`` (0-based)."""
    g = np.asarray(g, dtype=np.float64).ravel()
    spec = SegmentSpec.for_length(g.size, l)
    padded = np.zeros(spec.l * spec.m)
    padded[: spec.n] = g
    return padded.reshape(spec.m, spec.l).T.copy(), spec


def unsegment(g_hat: np.ndarray, spec: SegmentSpec) -> np.ndarray:
    if g_hat.shape != (spec.l, spec.m):
        raise ShapeMismatch(f"matrix shape {g_hat.shape} != ({spec.l}, {spec.m})")
    return g_hat.T.reshape(-1)[: spec.n].copy()


def restore(g_hat, spec: SegmentSpec, shape, layer_name: str = "") -> GradientTensor:
    if math.prod(shape) != spec.n:
        raise ShapeMismatch(f"shape {tuple(shape)} holds {math.prod(shape)} values, spec has n={spec.n}")
    flat = unsegment(np.asarray(g_hat, dtype=np.float64), spec)
    return unflatten_whdc(flat, shape, layer_name)


def _divisors(x: int) -> list[int]:
    return [v for v in range(1, x + 1) if x % v == 0]


def default_segment_length(shape) -> int:
    """Largest structure-aligned segment length not above ceil(sqrt(n)).

    Aligned lengths are those whose columns never straddle a structural
    boundary: for a (W, H, D, C) kernel these are W*H*j with j dividing D,
    then W*H*D*j with j dividing C; for a (rows, cols) matrix, the divisors
    of the row width and whole multiples of it; for a vector, the divisors
    of its length. Falls back to the smallest aligned length when none fits.
    """
    shape = tuple(int(s) for s in shape)
    n = math.prod(shape)
    target = math.isqrt(n - 1) + 1 if n > 1 else 1
    if len(shape) == 4:
        w, h, depth, chans = shape
        kernel = w * h
        aligned = {kernel * j for j in _divisors(depth)}
        aligned |= {kernel * depth * j for j in _divisors(chans)}
    elif len(shape) >= 2:
        width = shape[-1]
        outer = n // width
        aligned = set(_divisors(width)) | {width * j for j in _divisors(outer)}
    else:
        aligned = set(_divisors(n))
    fitting = [v for v in aligned if v <= target]
    return max(fitting) if fitting else min(aligned)
