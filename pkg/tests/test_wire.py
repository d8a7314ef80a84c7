import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradestc.compressor import BasisState, compress
from gradestc.errors import LengthMismatch, WireFormatError
from gradestc.wire import (
    HEADER_BYTES,
    LEDGER_COLUMNS,
    CommLedger,
    UplinkPayload,
    decode,
    encode,
    payload_from_result,
    raw_payload,
    record,
    stream_hash,
)

from streams import drifting_stream

GOLDEN = bytes.fromhex(
    "47455443"  # magic
    "0100"  # version
    "0807060504030201"  # stream id
    "0300000000000000"  # seq
    "02000000" "03000000" "02000000" "01000000"  # k, l, m, |P|
    "02000000"  # indices
    "0000003f000080bf00000040"  # one basis vector
    "0000803f000000400000404000008040"  # coefficients
    "0100000000000000" "0000803e"  # raw block
)


def golden_payload():
    return UplinkPayload(
        stream_id=0x0102030405060708,
        seq=3,
        k=2,
        l=3,
        m=2,
        replace_indices=[2],
        new_vectors=[[0.5, -1.0, 2.0]],
        coefficients=[[1.0, 2.0], [3.0, 4.0]],
        raw_params=[0.25],
    )


def test_golden_bytes():
    assert encode(golden_payload()) == GOLDEN
    assert decode(GOLDEN) == golden_payload()


def test_empty_replacement_body_size():
    p = UplinkPayload(stream_id=1, seq=0, k=2, l=5, m=3, coefficients=np.ones((2, 3)))
    assert len(encode(p)) == HEADER_BYTES + 24
    assert p.elements == 6


@st.composite
def payloads(draw):
    k, l, m = draw(st.integers(0, 6)), draw(st.integers(0, 8)), draw(st.integers(0, 6))
    p = draw(st.integers(0, k)) if l else 0
    idx = sorted(draw(st.lists(st.integers(1, max(k, 1)), min_size=p, max_size=p, unique=True)))
    floats = st.floats(width=32, allow_nan=False)
    vecs = draw(st.lists(floats, min_size=p * l, max_size=p * l))
    coeffs = draw(st.lists(floats, min_size=k * m, max_size=k * m))
    raw = draw(st.lists(floats, max_size=10))
    return UplinkPayload(
        stream_id=draw(st.integers(0, 2**64 - 1)),
        seq=draw(st.integers(0, 2**64 - 1)),
        k=k,
        l=l,
        m=m,
        replace_indices=idx,
        new_vectors=np.array(vecs, dtype=np.float32).reshape(p, l),
        coefficients=np.array(coeffs, dtype=np.float32).reshape(k, m),
        raw_params=raw,
    )


@given(payloads())
def test_round_trip(p):
    data = encode(p)
    assert len(data) == p.nbytes
    assert decode(data) == p


def test_decode_rejects_garbage():
    with pytest.raises(WireFormatError):
        decode(b"GETC")
    with pytest.raises(WireFormatError):
        decode(b"XXXX" + GOLDEN[4:])
    with pytest.raises(WireFormatError):
        decode(GOLDEN[:-1])
    with pytest.raises(WireFormatError):
        decode(GOLDEN + b"\0")


def test_coefficient_shape_checked():
    with pytest.raises(LengthMismatch):
        UplinkPayload(stream_id=0, seq=0, k=2, l=3, m=2, coefficients=np.ones((3, 2)))


def test_stream_hash_is_stable():
    assert stream_hash(1, "fc1.weight") == 17562825132344022052
    assert stream_hash(1, "fc1.weight") != stream_hash(2, "fc1.weight")


def test_record_counts_formula():
    p = UplinkPayload(
        stream_id=0, seq=0, k=8, l=160, m=10, replace_indices=[3, 7], new_vectors=np.ones((2, 160))
    )
    ledger = CommLedger()
    entry = record(ledger, p, round=0, client=0, layer="conv")
    assert entry.elements == 80 + 320 + 2 == 402
    assert entry.k_slot_elems == 80 + 320 + 8
    assert entry.bytes == HEADER_BYTES + 4 * 402


def test_record_without_replacement():
    p = UplinkPayload(stream_id=0, seq=0, k=4, l=16, m=9)
    assert record(CommLedger(), p, 0, 0, "w").elements == 36


@given(st.integers(1, 16), st.integers(1, 64), st.integers(1, 400), st.data())
def test_element_bound(k, l, n, data):
    m = -(-n // l)
    d_r = data.draw(st.integers(0, k))
    p = UplinkPayload(
        stream_id=0,
        seq=0,
        k=k,
        l=l,
        m=m,
        replace_indices=np.arange(1, d_r + 1),
        new_vectors=np.zeros((d_r, l)),
    )
    assert p.elements <= k * (m + l + 1)
    if n % l == 0:
        assert p.elements <= k * (n / l + l + 1)


def test_stream_bytes_equal_formula_plus_headers():
    state = BasisState(l=20, k=4, seed=3)
    ledger = CommLedger()
    expected = 0
    for t, g in enumerate(drifting_stream(0, 20, 7, 12)):
        res = compress(state, g)
        p = payload_from_result(0, "w", t, res)
        record(ledger, p, t, 0, "w")
        expected += 4 * (4 * 7 + res.d_replaced * 20 + res.d_replaced) + HEADER_BYTES
        assert len(encode(p)) == p.nbytes
    assert ledger.total_bytes() == expected


def test_raw_payload_and_csv(tmp_path):
    ledger = CommLedger()
    p = raw_payload(2, "fc.bias", 0, np.arange(5.0))
    record(ledger, p, 0, 2, "fc.bias")
    assert p.raw_elements == 5 and p.nbytes == HEADER_BYTES + 20
    out = tmp_path / "ledger.csv"
    ledger.to_csv(out)
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == LEDGER_COLUMNS
    assert rows[1] == ["0", "2", "fc.bias", "0", "0", "0", "5", str(HEADER_BYTES + 20)]
