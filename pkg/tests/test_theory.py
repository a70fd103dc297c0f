import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from qgraph.correlators import CorrelatorSpec
from qgraph.graph import build_graph
from qgraph.propagator import make_system
from qgraph.theory import (
    CalibrationError,
    GoeModel,
    PredictionError,
    coupling_for_transmission,
    ericson_f_factor,
    ericson_pq,
    ericson_two_point,
    ericson_width,
    goe_calibrate,
    goe_correlators,
    goe_matrix,
    goe_mean_s,
    goe_s_direct,
    goe_sample_s,
)

T10 = np.ones(10)
D = 10 / np.pi


def test_two_point_examples():
    assert ericson_two_point(T10, D, 0, 0, (0, 1, 0, 1)) == pytest.approx(0.1, abs=1e-15)
    assert ericson_two_point(T10, D, 0, 0, (0, 1, 1, 0)) == pytest.approx(0.1, abs=1e-15)
    assert ericson_two_point(T10, D, 0, 0, (3, 3, 3, 3)) == pytest.approx(0.2, abs=1e-15)
    assert ericson_two_point(T10, D, 0, 0, (0, 1, 2, 3)) == 0


def test_two_point_singular():
    with pytest.raises(PredictionError):
        ericson_two_point(np.zeros(3), D, 0, 0, (0, 1, 0, 1))
    with pytest.raises(PredictionError):
        ericson_two_point([1.2, 0.5], D, 0, 0, (0, 1, 0, 1))


def test_width_examples():
    assert ericson_width(T10, D) == pytest.approx(0.5, rel=1e-15)
    assert ericson_width(2 * np.full(10, 0.4), D) == pytest.approx(2 * ericson_width(np.full(10, 0.4), D), rel=1e-15)


def test_width_matches_half_maximum():
    t = np.array([1.0, 0.7, 0.3, 0.9])
    d = 2.3
    f = lambda s: abs(ericson_two_point(t, d, s, 0.0, (0, 1, 0, 1))) ** 2
    half = brentq(lambda s: f(s) - 0.5 * f(0.0), 0.0, 10.0, xtol=1e-15, rtol=1e-15)
    np.testing.assert_allclose(half, ericson_width(t, d), rtol=1e-12)


def test_f_factor_examples():
    assert ericson_f_factor(0.75, 0.0, T10, D, 0.0, [0.0]) == 0
    t = np.concatenate([[0.75], np.full(10, 0.925)])  # sum T = 10
    assert ericson_f_factor(0.75, 0.5, t, D, 0.0, [0.0]) == pytest.approx(-0.0375, abs=1e-15)


def test_f_factor_ignores_coupling_phase():
    g = build_graph(6, 3, seed=0)
    a = make_system(g, t_coeff=[0.75, 1, 1], phi1=0.0)
    b = make_system(g, t_coeff=[0.75, 1, 1], phi1=0.7)
    np.testing.assert_allclose(a.rho_diag, b.rho_diag, atol=1e-15)
    np.testing.assert_allclose(a.transmissions, b.transmissions, atol=1e-15)
    fa = ericson_f_factor(a.transmissions[0], a.rho_diag[0], a.transmissions, D, 0, [0])
    fb = ericson_f_factor(b.transmissions[0], b.rho_diag[0], b.transmissions, D, 0, [0])
    assert fa == fb


def test_pq_examples():
    zero = np.zeros(10)
    p = [((0, 1), 0.0)]
    assert ericson_pq(p, p, T10, D, zero) == ericson_two_point(T10, D, 0, 0, (0, 1, 0, 1))
    same = [((0, 1), 0.0), ((0, 1), 0.0)]
    assert ericson_pq(same, same, T10, D, zero) == pytest.approx(0.02, abs=1e-15)
    distinct = [((0, 1), 0.0), ((2, 3), 0.0)]
    assert ericson_pq(distinct, distinct, T10, D, zero) == pytest.approx(0.01, abs=1e-15)
    assert ericson_pq([((0, 1), 0.0), ((2, 3), 0.0)], [((2, 3), 0.0)], T10, D, np.full(10, 0.3)) == 0


def test_pq_selects_diagonal_unpaired():
    t = np.ones(10)
    t[0] = 0.75
    sm = np.zeros(10)
    sm[0] = 0.5
    v = ericson_pq([((0, 0), 0.0), ((1, 2), 0.0)], [((1, 2), 0.0)], t, D, sm)
    f = ericson_f_factor(0.75, 0.5, t, D, 0.0, [0.0])
    c = ericson_two_point(t, D, 0.0, 0.0, (1, 2, 1, 2))
    assert v == pytest.approx(f * c, abs=1e-15)
    assert v.real < 0


def test_pq_needs_p_at_least_q():
    with pytest.raises(PredictionError):
        ericson_pq([((0, 1), 0.0)], [((0, 1), 0.0), ((0, 1), 0.0)], T10, D, np.zeros(10))


offsets = st.floats(-0.3, 0.3)
channels = st.tuples(*[st.integers(0, 3)] * 4)


@given(st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4), offsets, offsets, channels)
def test_pq_reduces_to_two_point(t, k, kt, ch):
    a, b, c, d = ch
    v = ericson_pq([((a, b), k)], [((c, d), kt)], t, 1.7, np.zeros(4))
    w = ericson_two_point(t, 1.7, k, kt, ch)
    assert abs(v - w) <= 1e-12 * max(1.0, abs(w))


@given(st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4), offsets, offsets)
def test_two_point_conjugation_symmetry(t, k, kt):
    v = ericson_two_point(t, 1.3, k, kt, (0, 1, 0, 1))
    w = ericson_two_point(t, 1.3, -k, -kt, (0, 1, 0, 1))
    assert abs(v - np.conj(w)) < 1e-15


@given(st.integers(1, 3), st.integers(0, 2), st.data())
def test_pq_gaussian_structure(p, dq, data):
    q = max(p - dq, 0)
    pairs = st.tuples(st.integers(0, 3), st.integers(0, 3))
    ep = [(data.draw(pairs), data.draw(offsets)) for _ in range(p)]
    eq = [(data.draw(pairs), data.draw(offsets)) for _ in range(q)]
    t = np.array([1.0, 0.8, 0.6, 0.9])
    v = ericson_pq(ep, eq, t, 1.1, np.zeros(4))
    if p != q:
        assert v == 0
    else:
        import itertools

        ref = sum(
            np.prod([ericson_two_point(t, 1.1, ep[i][1], eq[j][1], ep[i][0] + eq[j][0]) for j, i in enumerate(perm)])
            for perm in itertools.permutations(range(p))
        )
        assert abs(v - ref) < 1e-12


# ---------------------------------------------------------------------------
# GOE oracle
# ---------------------------------------------------------------------------


def test_goe_sample_unitary_symmetric(rng):
    m = GoeModel(dim=150, couplings=[0.3, 0.5, 0.2])
    for _ in range(5):
        s = goe_sample_s(m, [0.0, 1.5], rng)
        for x in s:
            assert np.max(np.abs(x.conj().T @ x - np.eye(3))) < 1e-9
            assert np.max(np.abs(x - x.T)) < 1e-9


def test_goe_cayley_matches_direct(rng):
    m = GoeModel(dim=100, couplings=[0.3, 0.4])
    h = goe_matrix(100, rng)
    from qgraph.theory import _k_matrices, _s_from_k

    np.testing.assert_allclose(_s_from_k(_k_matrices(m, h, [0.7]))[0], goe_s_direct(m, h, 0.7), atol=1e-10)


def test_goe_decoupled_limit(rng):
    s = goe_sample_s(GoeModel(dim=100, couplings=[1e-9, 1e-9]), [0.0], rng)[0]
    np.testing.assert_allclose(s, np.eye(2), atol=1e-6)


def test_goe_mean_is_diagonal():
    m = GoeModel(dim=100, couplings=[coupling_for_transmission(0.5)] * 2)
    mean, _, _ = goe_mean_s(m, 4000, seed=1)
    np.testing.assert_allclose(np.abs(mean) ** 2, 0.5, atol=0.03)
    specs = [CorrelatorSpec([((0, 1), 0.0)], n_samples=4000, seed=1)]
    off = goe_correlators(m, specs, s_means=np.zeros(2))[0]
    assert off.z_score(0.0) < 4


def test_goe_dimension_guard():
    with pytest.raises(ValueError):
        GoeModel(dim=100, couplings=[0.1, 0.1, 0.1])


def test_calibrate_targets():
    m1 = goe_calibrate([1.0], dim=100, seed=0, n_draws=10_000)
    assert np.abs(complex(m1.calibration["mean_re"][0], m1.calibration["mean_im"][0])) < 0.02
    m5 = goe_calibrate([0.5, 0.5], dim=100, seed=0, n_draws=10_000)
    np.testing.assert_allclose(m5.calibration["measured_rho2"], 0.5, atol=0.01)
    m5b = goe_calibrate([0.5, 0.5], dim=100, seed=1, n_draws=10_000)
    np.testing.assert_allclose(m5b.couplings, m5.couplings, rtol=0.02)


def test_calibrate_failure_has_trace():
    with pytest.raises(CalibrationError) as exc:
        goe_calibrate([0.5], dim=50, seed=0, n_draws=100, tol=1e-9, max_iter=2)
    assert len(exc.value.trace) == 2


def test_goe_statistics_ignore_coupling_basis(rng):
    c = [coupling_for_transmission(0.5)] * 2
    q, _ = np.linalg.qr(rng.standard_normal((100, 2)))
    specs = [CorrelatorSpec([((0, 1), 0.3)], [((0, 1), 0.3)], n_samples=2000, n_batches=20, seed=2)]
    a = goe_correlators(GoeModel(dim=100, couplings=c), specs)[0]
    specs_b = [CorrelatorSpec([((0, 1), 0.3)], [((0, 1), 0.3)], n_samples=2000, n_batches=20, seed=3)]
    b = goe_correlators(GoeModel(dim=100, couplings=c, basis=q), specs_b)[0]
    assert a.z_score(b.mean, complex(b.stderr_re, b.stderr_im)) < 4
