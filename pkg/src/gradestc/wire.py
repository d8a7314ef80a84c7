"""Uplink payload serialization and communication accounting.

Layout (little-endian)::

    magic  b"GETC"          4 bytes
    version                 u16
    stream id hash          u64
    seq                     u64
    k, l, m, |P|            u32 each
    replace indices         |P| x u32 (1-based)
    new basis vectors       |P| x l x f32
    coefficients            k x m x f32, row-major
    raw block length        u64
    raw block               f32 each

Layers that are not low-rank compressed travel as ``k = l = m = 0`` payloads
carrying only the raw block.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compressor import CompressResult
from .errors import LengthMismatch, WireFormatError
from .seeding import name_key

MAGIC = b"GETC"
VERSION = 1
_HEAD = struct.Struct("<4sHQQIIII")
_RAW_LEN = struct.Struct("<Q")
HEADER_BYTES = _HEAD.size + _RAW_LEN.size
FLOAT_BYTES = 4


def stream_hash(client_id: int, layer_name: str) -> int:
    return name_key(f"{int(client_id)}/{layer_name}")


@dataclass(eq=False)
class UplinkPayload:
    stream_id: int
    seq: int
    k: int
    l: int
    m: int
    replace_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))
    new_vectors: np.ndarray | None = None
    coefficients: np.ndarray | None = None
    raw_params: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))

    def __post_init__(self):
        self.replace_indices = np.asarray(self.replace_indices, dtype=np.uint32).ravel()
        p = self.replace_indices.shape[0]
        vecs = np.zeros((p, self.l), np.float32) if self.new_vectors is None else self.new_vectors
        self.new_vectors = np.asarray(vecs, dtype=np.float32).reshape(p, self.l)
        coeffs = np.zeros((self.k, self.m), np.float32) if self.coefficients is None else self.coefficients
        self.coefficients = np.asarray(coeffs, dtype=np.float32)
        if self.coefficients.shape != (self.k, self.m):
            raise LengthMismatch(f"coefficients shape {self.coefficients.shape} != ({self.k}, {self.m})")
        self.raw_params = np.asarray(self.raw_params, dtype=np.float32).ravel()

    @property
    def d_replaced(self) -> int:
        return int(self.replace_indices.shape[0])

    @property
    def coeff_elements(self) -> int:
        return self.k * self.m

    @property
    def basis_elements(self) -> int:
        return self.d_replaced * self.l

    @property
    def index_elements(self) -> int:
        return self.d_replaced

    @property
    def raw_elements(self) -> int:
        return int(self.raw_params.shape[0])

    @property
    def elements(self) -> int:
        return self.coeff_elements + self.basis_elements + self.index_elements + self.raw_elements

    @property
    def k_slot_elements(self) -> int:
        """Cost with the index term charged as k slots per round."""
        return self.coeff_elements + self.basis_elements + self.k + self.raw_elements

    @property
    def nbytes(self) -> int:
        return HEADER_BYTES + FLOAT_BYTES * self.elements

    def __eq__(self, other) -> bool:
        if not isinstance(other, UplinkPayload):
            return NotImplemented
        scalars = (self.stream_id, self.seq, self.k, self.l, self.m)
        if scalars != (other.stream_id, other.seq, other.k, other.l, other.m):
            return False
        pairs = [
            (self.replace_indices, other.replace_indices),
            (self.new_vectors, other.new_vectors),
            (self.coefficients, other.coefficients),
            (self.raw_params, other.raw_params),
        ]
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def payload_from_result(client_id: int, layer_name: str, seq: int, result: CompressResult) -> UplinkPayload:
    k, m = result.coefficients.shape
    return UplinkPayload(
        stream_id=stream_hash(client_id, layer_name),
        seq=seq,
        k=k,
        l=result.new_vectors.shape[1],
        m=m,
        replace_indices=result.replace_indices,
        new_vectors=result.new_vectors,
        coefficients=result.coefficients,
    )


def raw_payload(client_id: int, layer_name: str, seq: int, values) -> UplinkPayload:
    return UplinkPayload(
        stream_id=stream_hash(client_id, layer_name), seq=seq, k=0, l=0, m=0, raw_params=np.ravel(values)
    )


def encode(payload: UplinkPayload) -> bytes:
    head = _HEAD.pack(
        MAGIC,
        VERSION,
        payload.stream_id,
        payload.seq,
        payload.k,
        payload.l,
        payload.m,
        payload.d_replaced,
    )
    le32 = np.dtype("<f4")
    return b"".join(
        [
            head,
            payload.replace_indices.astype("<u4").tobytes(),
            payload.new_vectors.astype(le32).tobytes(),
            payload.coefficients.astype(le32).tobytes(),
            _RAW_LEN.pack(payload.raw_elements),
            payload.raw_params.astype(le32).tobytes(),
        ]
    )


def decode(data: bytes) -> UplinkPayload:
    if len(data) < HEADER_BYTES:
        raise WireFormatError(f"truncated payload: {len(data)} bytes")
    magic, version, sid, seq, k, l, m, p = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireFormatError(f"unsupported version {version}")

    offset = _HEAD.size

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal offset
        size = count * 4
        if offset + size > len(data):
            raise WireFormatError("payload shorter than its header declares")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += size
        return arr

    indices = take(p, "<u4").astype(np.uint32)
    vectors = take(p * l, "<f4").astype(np.float32).reshape(p, l)
    coeffs = take(k * m, "<f4").astype(np.float32).reshape(k, m)
    if offset + _RAW_LEN.size > len(data):
        raise WireFormatError("missing raw block length")
    (raw_len,) = _RAW_LEN.unpack_from(data, offset)
    offset += _RAW_LEN.size
    raw = take(raw_len, "<f4").astype(np.float32)
    if offset != len(data):
        raise WireFormatError(f"{len(data) - offset} trailing bytes")
    return UplinkPayload(sid, seq, k, l, m, indices, vectors, coeffs, raw)


LEDGER_COLUMNS = ("round", "client", "layer", "coeff_elems", "basis_elems", "index_elems", "raw_elems", "bytes")


@dataclass(frozen=True)
class LedgerRecord:
    round: int
    client: int
    layer: str
    coeff_elems: int
    basis_elems: int
    index_elems: int
    raw_elems: int
    bytes: int
    k_slot_elems: int

    @property
    def elements(self) -> int:
        return self.coeff_elems + self.basis_elems + self.index_elems + self.raw_elems


@dataclass
class CommLedger:
    records: list[LedgerRecord] = field(default_factory=list)

    def add(self, record: LedgerRecord) -> None:
        self.records.append(record)

    def total_bytes(self, layers=None, round=None) -> int:
        return sum(r.bytes for r in self._select(layers, round))

    def total_elements(self, layers=None, round=None) -> int:
        return sum(r.elements for r in self._select(layers, round))

    def total_k_slot_elements(self, layers=None, round=None) -> int:
        return sum(r.k_slot_elems for r in self._select(layers, round))

    def _select(self, layers, round):
        layers = None if layers is None else set(layers)
        for r in self.records:
            if layers is not None and r.layer not in layers:
                continue
            if round is not None and r.round != round:
                continue
            yield r

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LEDGER_COLUMNS)
            for r in self.records:
                writer.writerow([getattr(r, c) for c in LEDGER_COLUMNS])


def record(ledger: CommLedger, payload: UplinkPayload, round: int, client: int, layer: str) -> LedgerRecord:
    entry = LedgerRecord(
        round=round,
        client=client,
        layer=layer,
        coeff_elems=payload.coeff_elements,
        basis_elems=payload.basis_elements,
        index_elems=payload.index_elements,
        raw_elems=payload.raw_elements,
        bytes=payload.nbytes,
        k_slot_elems=payload.k_slot_elements,
    )
    ledger.add(entry)
    return entry


def uncompressed_bytes(n: int) -> int:
    return FLOAT_BYTES * n


def record_upload(ledger: CommLedger, up, round: int, client: int) -> LedgerRecord:
    """Ledger entry for any codec upload exposing the element/byte fields."""
    entry = LedgerRecord(
        round=round,
        client=client,
        layer=up.layer,
        coeff_elems=up.coeff_elems,
        basis_elems=up.basis_elems,
        index_elems=up.index_elems,
        raw_elems=up.raw_elems,
        bytes=up.nbytes,
        k_slot_elems=up.k_slot_elems,
    )
    ledger.add(entry)
    return entry
