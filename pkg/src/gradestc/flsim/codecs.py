"""Per-layer uplink codecs plugged into the simulator.

Every codec is split into a client half (owns any compressor state and
produces an :class:`Upload`) and a server half (turns the upload back into a
dense update). GradESTC uploads travel as encoded bytes; the baselines carry
their payload objects and charge bytes by the same header + 32-bit-word rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import compressor, wire
from ..decompressor import MirrorState, decompress
from ..errors import ConfigError, NoSignal
from ..reshape import GradientTensor, SegmentSpec, default_segment_length, flatten_whdc, segment
from ..seeding import TAG_STATE, derive_seed
from .models import from_tensor_values, layer_tensor_shape, to_tensor_values


@dataclass
class CodecSpec:
    kind: str = "none"
    k: int = 8
    l: int | None = None
    alpha: float = compressor.DEFAULT_ALPHA
    beta: float = compressor.DEFAULT_BETA
    mode: str = "full"
    fraction: float = 0.1
    bits: int = 8

    def __post_init__(self):
        if self.kind not in ("none", "gradestc", "topk", "quant"):
            raise ConfigError(f"unknown codec kind {self.kind!r}")
        if self.kind == "topk" and not 0 < self.fraction <= 1:
            raise ConfigError("topk fraction must be in (0, 1]")
        if self.kind == "quant" and not (1 <= self.bits <= 16 or self.bits == 32):
            raise ConfigError("quant bits must be in 1..16 (or 32 for pass-through)")
        if self.kind == "gradestc":
            compressor.AblationMode(self.mode)
            if self.k < 1:
                raise ConfigError("gradestc k must be positive")


@dataclass
class Upload:
    layer: str
    coeff_elems: int
    basis_elems: int
    index_elems: int
    raw_elems: int
    nbytes: int
    k_slot_elems: int
    body: object
    d_probed: int = 0
    d_replaced: int = 0
    diagnostics: dict = field(default_factory=dict, repr=False)


def _ceil_count(fraction: float, n: int) -> int:
    return max(1, min(n, math.ceil(fraction * n - 1e-9)))


@dataclass
class SparsePayload:
    indices: np.ndarray
    values: np.ndarray
    shape: tuple[int, ...]

    @property
    def elements(self) -> int:
        return 2 * int(self.indices.shape[0])


def baseline_topk(t: GradientTensor, fraction: float) -> SparsePayload:
    """Keep the ceil(fraction * n) largest-magnitude entries (ties: lower index)."""
    flat = t.values.ravel()
    kept = _ceil_count(fraction, flat.size)
    order = np.argsort(-np.abs(flat), kind="stable")[:kept]
    idx = np.sort(order)
    return SparsePayload(idx.astype(np.uint32), flat[idx].astype(np.float32), t.shape)


def densify(p: SparsePayload) -> np.ndarray:
    out = np.zeros(math.prod(p.shape))
    out[p.indices.astype(np.int64)] = p.values.astype(np.float64)
    return out.reshape(p.shape)


@dataclass
class QuantPayload:
    levels: np.ndarray
    scale: np.float32
    bits: int
    shape: tuple[int, ...]

    @property
    def n(self) -> int:
        return math.prod(self.shape)

    @property
    def elements(self) -> int:
        # packed words plus one float32 scale
        return math.ceil(self.n * self.bits / 32) + 1

    @property
    def body_bytes(self) -> int:
        return math.ceil(self.n * self.bits / 8) + wire.FLOAT_BYTES


def baseline_quant(t: GradientTensor, bits: int) -> QuantPayload:
    """Symmetric uniform quantization with one float32 scale per layer.

    For ``bits >= 2`` the grid is ``scale * q / L`` with integer
    ``q in [-L, L]`` and ``L = 2**(bits-1) - 1``, so the per-element error is
    at most half a step. ``bits == 1`` keeps only signs (``±scale``).
    ``bits == 32`` sends the values as float32.
    """
    flat = t.values.ravel()
    if bits == 32:
        return QuantPayload(flat.astype(np.float32), np.float32(1.0), 32, t.shape)
    scale = np.float32(np.max(np.abs(flat))) if flat.size else np.float32(0.0)
    if bits == 1:
        levels = np.where(flat < 0, -1, 1).astype(np.int8)
    else:
        top = 2 ** (bits - 1) - 1
        if scale == 0:
            levels = np.zeros(flat.size, dtype=np.int32)
        else:
            levels = np.clip(np.rint(flat / np.float64(scale) * top), -top, top).astype(np.int32)
    return QuantPayload(levels, scale, bits, t.shape)


def dequantize(p: QuantPayload) -> np.ndarray:
    if p.bits == 32:
        return p.levels.astype(np.float64).reshape(p.shape)
    scale = np.float64(p.scale)
    if p.bits == 1:
        return (p.levels.astype(np.float64) * scale).reshape(p.shape)
    top = 2 ** (p.bits - 1) - 1
    return ((p.levels.astype(np.float64) / top) * scale).reshape(p.shape)


def quant_step(p: QuantPayload) -> float:
    if p.bits in (1, 32):
        return float(p.scale) if p.bits == 1 else 0.0
    return float(p.scale) / (2 ** (p.bits - 1) - 1)


class PassThroughClient:
    kind = "none"

    def __init__(self, layer: str):
        self.layer = layer

    def encode(self, values: np.ndarray, seq: int) -> Upload:
        n = values.size
        return Upload(self.layer, 0, 0, 0, n, wire.HEADER_BYTES + wire.FLOAT_BYTES * n, n, values.copy())


class PassThroughServer:
    def decode(self, up: Upload) -> np.ndarray:
        return up.body


class TopKClient:
    kind = "topk"

    def __init__(self, layer: str, fraction: float):
        self.layer = layer
        self.fraction = fraction

    def encode(self, values, seq):
        shape = layer_tensor_shape(values)
        p = baseline_topk(GradientTensor(self.layer, shape, to_tensor_values(values)), self.fraction)
        kept = p.elements // 2
        nbytes = wire.HEADER_BYTES + wire.FLOAT_BYTES * p.elements
        return Upload(self.layer, kept, 0, kept, 0, nbytes, p.elements, p)


class TopKServer:
    def decode(self, up):
        return from_tensor_values(densify(up.body))


class QuantClient:
    kind = "quant"

    def __init__(self, layer: str, bits: int):
        self.layer = layer
        self.bits = bits

    def encode(self, values, seq):
        shape = layer_tensor_shape(values)
        p = baseline_quant(GradientTensor(self.layer, shape, to_tensor_values(values)), self.bits)
        return Upload(self.layer, p.elements, 0, 0, 0, wire.HEADER_BYTES + p.body_bytes, p.elements, p)


class QuantServer:
    def decode(self, up):
        return from_tensor_values(dequantize(up.body))


class GradESTCClient:
    kind = "gradestc"

    def __init__(self, client_id: int, layer: str, shape, spec: CodecSpec, seed: int):
        self.client_id = client_id
        self.layer = layer
        self.shape = tuple(shape)
        n = math.prod(self.shape)
        self.l = spec.l or default_segment_length(self.shape)
        m = -(-n // self.l)
        k = min(spec.k, self.l, m)
        self.state = compressor.BasisState(
            l=self.l,
            k=k,
            alpha=spec.alpha,
            beta=spec.beta,
            seed=derive_seed(seed, TAG_STATE, client_id, layer),
        )
        compressor.ablation_mode(self.state, spec.mode)

    def encode(self, values, seq):
        t = GradientTensor(self.layer, self.shape, to_tensor_values(values))
        g_matrix, _ = segment(flatten_whdc(t), self.l)
        try:
            result = compressor.compress(self.state, g_matrix)
        except NoSignal:
            # nothing to factor yet; send zero coefficients and stay uninitialized
            self.state.round_counter += 1
            result = compressor.CompressResult(
                replace_indices=np.zeros(0, np.int64),
                new_vectors=np.zeros((0, self.l)),
                coefficients=np.zeros((self.state.k, g_matrix.shape[1])),
                d_probed=0,
                no_signal=True,
            )
        payload = wire.payload_from_result(self.client_id, self.layer, seq, result)
        diagnostics = {"g_matrix": g_matrix, "result": result}
        if self.state.initialized:
            diagnostics["m_basis"] = self.state.m_basis
        return Upload(
            self.layer,
            payload.coeff_elements,
            payload.basis_elements,
            payload.index_elements,
            0,
            payload.nbytes,
            payload.k_slot_elements,
            wire.encode(payload),
            d_probed=result.d_probed,
            d_replaced=result.d_replaced,
            diagnostics=diagnostics,
        )


class GradESTCServer:
    def __init__(self, client: GradESTCClient):
        n = math.prod(client.shape)
        self.mirror = MirrorState(
            spec=SegmentSpec.for_length(n, client.l),
            layer_shape=client.shape,
            k=client.state.k,
            layer_name=client.layer,
        )

    def decode(self, up):
        t = decompress(self.mirror, wire.decode(up.body))
        return from_tensor_values(t.values)


def make_channel(client_id: int, layer: str, param: np.ndarray, spec: CodecSpec, seed: int):
    """Build the (client half, server half) pair for one stream."""
    if spec.kind == "none":
        return PassThroughClient(layer), PassThroughServer()
    if spec.kind == "topk":
        return TopKClient(layer, spec.fraction), TopKServer()
    if spec.kind == "quant":
        return QuantClient(layer, spec.bits), QuantServer()
    client = GradESTCClient(client_id, layer, layer_tensor_shape(param), spec, seed)
    return client, GradESTCServer(client)

