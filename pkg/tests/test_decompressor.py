import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradestc.compressor import BasisState, compress, wire_reconstruction
from gradestc.decompressor import MirrorState, apply_payload, decompress
from gradestc.errors import IndexOutOfRange, LengthMismatch, OutOfOrderPayload, UninitializedStream
from gradestc.linalg import orthonormality_defect
from gradestc.reshape import GradientTensor, SegmentSpec, flatten_whdc, segment
from gradestc.wire import UplinkPayload, decode, encode, payload_from_result

from streams import drifting_stream


def mirror(l, m, k, shape=None):
    return MirrorState(spec=SegmentSpec.for_length(l * m, l), layer_shape=shape or (l * m,), k=k)


def f32(x):
    return np.asarray(x).astype(np.float32).astype(np.float64)


def test_in_span_payload_reconstructs():
    basis = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))[0]
    g = basis @ np.array([[1.0, -2.0, 0.5], [0.25, 1.0, 3.0]])
    state = mirror(6, 3, 2)
    first = UplinkPayload(stream_id=0, seq=0, k=2, l=6, m=3, replace_indices=[1, 2], new_vectors=basis.T,
                          coefficients=basis.T @ g)
    out = apply_payload(state, first)
    assert np.linalg.norm(out - g) <= 1e-6 * np.linalg.norm(g)
    second = UplinkPayload(stream_id=0, seq=1, k=2, l=6, m=3, coefficients=basis.T @ g)
    out = apply_payload(state, second)
    np.testing.assert_array_equal(out, f32(basis) @ f32(basis.T @ g))


def test_zero_coefficients_give_zero_tensor():
    state = mirror(4, 2, 1, shape=(2, 4))
    apply_payload(state, UplinkPayload(0, 0, 1, 4, 2, [1], [[1, 0, 0, 0]], [[1.0, 2.0]]))
    t = decompress(state, UplinkPayload(0, 1, 1, 4, 2))
    assert t.values.shape == (2, 4) and not np.any(t.values)


def test_first_payload_must_carry_full_basis():
    state = mirror(4, 2, 2)
    with pytest.raises(UninitializedStream):
        apply_payload(state, UplinkPayload(0, 0, 2, 4, 2, [1], [[1, 0, 0, 0]], np.ones((2, 2))))


def test_no_signal_before_first_basis_is_accepted():
    state = mirror(4, 2, 2)
    out = apply_payload(state, UplinkPayload(0, 0, 2, 4, 2))
    assert not np.any(out) and not state.initialized


def test_index_and_length_errors():
    state = mirror(4, 2, 2)
    with pytest.raises(IndexOutOfRange):
        apply_payload(state, UplinkPayload(0, 0, 2, 4, 2, [1, 3], np.eye(4)[:2]))
    with pytest.raises(LengthMismatch):
        apply_payload(state, UplinkPayload(0, 0, 2, 4, 3))
    with pytest.raises(LengthMismatch):
        apply_payload(state, UplinkPayload(0, 0, 2, 5, 2, [1, 2], np.eye(5)[:2]))


def test_sequence_gap_detected():
    state = mirror(4, 2, 1)
    apply_payload(state, UplinkPayload(0, 0, 1, 4, 2, [1], [[1, 0, 0, 0]]))
    with pytest.raises(OutOfOrderPayload):
        apply_payload(state, UplinkPayload(0, 2, 1, 4, 2))


def test_debug_orthonormality_check():
    state = mirror(4, 2, 2)
    state.check_orthonormal = True
    apply_payload(state, UplinkPayload(0, 0, 2, 4, 2, [1, 2], np.eye(4)[:2]))
    assert state.last_defect == 0.0
    with pytest.raises(ValueError):
        apply_payload(state, UplinkPayload(0, 1, 2, 4, 2, [2], [[1, 0, 0, 0]]))


@given(st.integers(4, 24), st.integers(2, 12), st.integers(1, 5), st.integers(0, 10**6))
def test_mirror_matches_client_bit_exactly(l, m, k, seed):
    k = min(k, l, m)
    client = BasisState(l=l, k=k, seed=seed)
    server = mirror(l, m, k)
    for t, g in enumerate(drifting_stream(seed, l, m, 10, drift=0.8)):
        res = compress(client, g)
        payload = decode(encode(payload_from_result(0, "w", t, res)))
        out = apply_payload(server, payload)
        assert server.m_basis.tobytes() == f32(client.m_basis).tobytes()
        assert out.tobytes() == wire_reconstruction(client, res).tobytes()
        assert orthonormality_defect(server.m_basis) <= 1e-5


def test_error_is_orthogonal_to_reconstruction():
    shape = (3, 3, 2, 4)  # (W, H, D, C)
    rng = np.random.default_rng(8)
    client = BasisState(l=18, k=3, seed=1)
    n = int(np.prod(shape))
    server = MirrorState(spec=SegmentSpec.for_length(n, 18), layer_shape=shape, k=3)
    base = rng.standard_normal(shape)
    for t in range(6):
        grad = GradientTensor("conv", shape, base + 0.2 * t * rng.standard_normal(shape))
        g_mat, _ = segment(flatten_whdc(grad), 18)
        res = compress(client, g_mat)
        out = decompress(server, decode(encode(payload_from_result(0, "conv", t, res))))
        e = flatten_whdc(grad) - flatten_whdc(out)
        g_norm_sq = np.sum(grad.values**2)
        assert abs(e @ flatten_whdc(out)) <= 1e-6 * g_norm_sq
        local_err = np.linalg.norm(g_mat - client.m_basis @ res.coefficients)
        assert abs(np.linalg.norm(e) - local_err) <= 1e-6 * np.sqrt(g_norm_sq)
