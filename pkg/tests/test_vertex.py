import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgraph.vertex import (
    VertexError,
    build_canonical_vertex,
    build_designed_vertex,
    build_kirchhoff_vertex,
    validate_vertex,
)


def _unitarity(g):
    return np.max(np.abs(g.conj().T @ g - np.eye(len(g))))


def _low_rank_dense(vm):
    c, m, u = vm.low_rank
    return c * np.eye(u.shape[0]) + (u * m) @ u.T


def test_kirchhoff_small():
    np.testing.assert_allclose(build_kirchhoff_vertex(2, False).gamma, [[0, 1], [1, 0]], atol=1e-15)
    g3 = build_kirchhoff_vertex(3, False).gamma
    np.testing.assert_allclose(np.diag(g3), -1 / 3, atol=1e-15)
    np.testing.assert_allclose(g3[0, 1], 2 / 3, atol=1e-15)


def test_kirchhoff_with_lead():
    vm = build_kirchhoff_vertex(4, True)
    assert vm.rho == pytest.approx(-0.5)
    assert vm.transmission == pytest.approx(0.75)


def test_canonical_full_transmission_two_lines():
    vm = build_canonical_vertex(2, 1.0, phases=[0.0])
    np.testing.assert_allclose(vm.gamma, [[0, 1], [1, 0]], atol=1e-15)


def test_canonical_closed_lead():
    vm = build_canonical_vertex(5, 0.0, mixer_seed=4)
    assert abs(vm.rho - 1.0) < 1e-15
    s = vm.sigma
    np.testing.assert_allclose(s @ s.conj().T, np.eye(4), atol=1e-13)


def test_canonical_partial_transmission_spectrum():
    vm = build_canonical_vertex(5, 0.64, mixer_seed=2)
    assert vm.rho.real == pytest.approx(0.6, abs=1e-14)
    ev = np.sort(np.linalg.eigvalsh(vm.sigma @ vm.sigma.conj().T))
    np.testing.assert_allclose(ev, [0.36, 1, 1, 1], atol=1e-12)


def test_validate_flags_corruption():
    vm = build_kirchhoff_vertex(5, False)
    rep = validate_vertex(vm)
    assert rep.ok and rep.unitarity_residual < 1e-14 and rep.symmetry_residual < 1e-14
    bad = vm.gamma.copy()
    bad[0, 1] += 1e-3
    vm_bad = type(vm)(vertex=0, has_lead=False, gamma=bad, family="kirchhoff")
    assert not validate_vertex(vm_bad).ok


def test_validate_canonical_spectrum():
    rep = validate_vertex(build_canonical_vertex(6, 0.5, mixer_seed=1))
    np.testing.assert_allclose(rep.sigma_spectrum, [1, 1, 1, 1, 0.5], atol=1e-12)


def test_bad_transmission():
    with pytest.raises(VertexError):
        build_canonical_vertex(3, 1.5)
    with pytest.raises(VertexError):
        build_kirchhoff_vertex(0, False)


@given(st.integers(2, 12), st.floats(0.0, 1.0), st.integers(0, 10_000), st.floats(-3, 3))
def test_canonical_rho_and_transmission(v, t, seed, phi1):
    ph = np.random.default_rng(seed).uniform(0, 2 * np.pi, v - 1)
    ph[0] = phi1
    vm = build_canonical_vertex(v, t, phases=ph, mixer_seed=seed)
    assert abs(1 - abs(vm.rho) ** 2 - t) < 1e-12
    assert _unitarity(vm.gamma) < 1e-12
    assert np.max(np.abs(vm.gamma - vm.gamma.T)) < 1e-12


@given(st.integers(3, 10), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_mixer_keeps_rho_and_spectrum(v, t, seed):
    a = build_canonical_vertex(v, t, mixer_seed=seed)
    b = build_canonical_vertex(v, t, mixer_seed=seed + 1)
    assert abs(a.rho - b.rho) < 1e-14
    ea = np.linalg.eigvalsh(a.sigma @ a.sigma.conj().T)
    eb = np.linalg.eigvalsh(b.sigma @ b.sigma.conj().T)
    np.testing.assert_allclose(ea, eb, atol=1e-12)


@given(st.integers(1, 16), st.integers(0, 1000), st.sampled_from(["binary", "goe"]))
def test_designed_lead_free_unitary(v, seed, spectrum):
    vm = build_designed_vertex(v, seed, spectrum=spectrum)
    assert _unitarity(vm.gamma) < 1e-12
    assert np.max(np.abs(vm.gamma - vm.gamma.T)) < 1e-12
    np.testing.assert_allclose(vm.sigma @ vm.sigma.conj().T, np.eye(v), atol=1e-12)


@given(st.integers(2, 14), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_low_rank_form_reconstructs_sigma(v, t, seed):
    ph = np.where(np.random.default_rng(seed).random(v - 1) < 0.5, 0.0, np.pi)
    for vm in (
        build_canonical_vertex(v, t, phases=ph, mixer_seed=seed),
        build_kirchhoff_vertex(v, False),
        build_kirchhoff_vertex(v, True),
        build_designed_vertex(v, seed, spectrum="binary"),
    ):
        if vm.low_rank is not None:
            np.testing.assert_allclose(_low_rank_dense(vm), vm.sigma, atol=1e-12)


def test_goe_spectrum_has_no_low_rank_form():
    assert build_designed_vertex(8, 0, spectrum="goe").low_rank is None


def test_binary_designed_is_reflection():
    vm = build_designed_vertex(9, 3, spectrum="binary")
    ev = np.linalg.eigvals(vm.gamma)
    np.testing.assert_allclose(np.sort(ev.real), [-1] * 4 + [1] * 5, atol=1e-12)
    assert vm.rank == 4
