import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradestc.compressor import BasisState, compress
from gradestc.metrics import (
    GradientTrace,
    adjacent_vs_distant,
    cosine,
    cosine_heatmap,
    error_correlation,
    subspace_concentration,
    summarize_errors,
    energy_gap,
)

from streams import drifting_stream


def test_cosine_basics():
    v = np.array([0.3, -1.7, 2.2])
    assert cosine(v, v) == (1.0, False)
    assert cosine([1, 0], [0, 3]) == (0.0, False)
    assert cosine([0, 0], [1, 2]) == (0.0, True)
    assert cosine([1, 1], [-2, -2])[0] == pytest.approx(-1.0)


def test_trace_rejects_non_increasing_rounds():
    tr = GradientTrace(window=3)
    tr.append(0, "w", 1, [1.0])
    with pytest.raises(ValueError):
        tr.append(0, "w", 1, [2.0])


def test_trace_ring_buffer_and_round_trip(tmp_path):
    tr = GradientTrace(window=3)
    for r in range(5):
        tr.append(0, "w", r, np.full(4, r, dtype=float))
    tr.append(1, "b", 0, [1.0, 2.0])
    assert tr.rounds(0, "w") == [2, 3, 4]
    with pytest.raises(KeyError):
        tr.get(0, "w", 0)
    loaded = GradientTrace.load(tr.save(tmp_path / "t"))
    assert loaded.streams() == tr.streams()
    assert loaded.rounds(0, "w") == [2, 3, 4]
    np.testing.assert_array_equal(loaded.get(0, "w", 4), tr.get(0, "w", 4))
    assert loaded.get(0, "w", 4).dtype == np.float32


def test_heatmap_self_column_is_one(tmp_path, rng):
    tr = GradientTrace()
    for r in range(6):
        tr.append(0, "a", r, rng.standard_normal(10))
        tr.append(0, "b", r, np.zeros(3) if r == 2 else rng.standard_normal(3))
    hm = cosine_heatmap(tr, [1, 4])
    for layer in ("a", "b"):
        assert hm.values[layer][1, 0] == 1.0 and hm.values[layer][4, 1] == 1.0
    assert hm.zero_flags["b"][2].all() and not hm.zero_flags["a"].any()
    hm.to_csv(tmp_path / "h.csv")
    header = (tmp_path / "h.csv").read_text().splitlines()[0]
    assert header == "round,a@1,a@4,b@1,b@4"


def test_adjacent_rounds_more_similar_on_converging_quadratic():
    # gradient descent on an ill-conditioned quadratic: the gradient direction
    # rotates slowly as the fast modes die out
    h = np.diag(np.linspace(0.05, 1.0, 20))
    x = np.ones(20)
    tr = GradientTrace()
    for r in range(60):
        g = h @ x
        tr.append(0, "q", r, g)
        x = x - 1.0 * g
    adj, dist = adjacent_vs_distant(tr, 0, "q", 0, 59, 20)
    assert adj > dist
    assert cosine(tr.get(0, "q", 1), tr.get(0, "q", 2))[0] > cosine(tr.get(0, "q", 1), tr.get(0, "q", 50))[0]


def test_subspace_concentration_extremes():
    m_basis = np.eye(4)[:, :2]
    inside = m_basis @ np.array([[1.0, 2.0], [3.0, -1.0]])
    outside = np.eye(4)[:, 2:] @ np.array([[1.0, 2.0], [3.0, -1.0]])
    assert subspace_concentration(inside, m_basis) == pytest.approx(1.0)
    assert subspace_concentration(outside, m_basis) == 0.0
    assert subspace_concentration(np.zeros((4, 2)), m_basis) == 1.0


@given(st.integers(0, 10**6))
def test_energy_identity_on_compressed_stream(seed):
    state = BasisState(l=16, k=3, seed=seed)
    for g in drifting_stream(seed, 16, 9, 5, drift=0.7):
        res = compress(state, g)
        recon = state.m_basis @ res.coefficients
        assert energy_gap(g, state.m_basis, recon) <= 1e-9
        chi = subspace_concentration(g, state.m_basis)
        assert 0.0 <= chi**2 <= 1.0 + 1e-9


@given(st.integers(2, 8), st.integers(1, 30), st.integers(0, 10**6))
def test_error_correlation_identity(n, dim, seed):
    e = np.random.default_rng(seed).standard_normal((n, dim))
    corr = error_correlation(list(e))
    assert corr.identity_residual <= 1e-9
    assert corr.avg_err == pytest.approx(np.sum(e.mean(axis=0) ** 2))
    off = [e[i] @ e[j] for i in range(n) for j in range(n) if i != j]
    assert corr.tau_hat == pytest.approx(max(off), rel=1e-12)


def test_error_correlation_needs_two_clients():
    with pytest.raises(ValueError):
        error_correlation([np.ones(3)])


def test_summarize_errors_tracks_rho():
    rng = np.random.default_rng(1)
    m_basis = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    items = []
    for _ in range(3):
        g = rng.standard_normal((6, 4))
        items.append((g, m_basis, m_basis @ (m_basis.T @ g)))
    stats = summarize_errors(4, "w", items, rho_sq_prev=1e6)
    assert stats.rho_sq_hat == 1e6
    assert all(e <= g for e, g in zip(stats.err_sq, stats.g_sq))
    assert max(stats.energy_gap) <= 1e-9 and stats.identity_residual <= 1e-9
    assert '"layer": "w"' in stats.to_json()


def test_adjacent_vs_distant_without_pairs_is_nan():
    tr = GradientTrace()
    for r in range(3):
        tr.append(0, "w", r, [1.0, float(r)])
    adj, dist = adjacent_vs_distant(tr, 0, "w", 0, 2, 20)
    assert adj > 0.5 and np.isnan(dist)
