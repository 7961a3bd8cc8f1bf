import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floquet_qtm.errors import InvalidArgument, ModelEvaluationError
from floquet_qtm.liouville import (SIGMA_MINUS, SIGMA_PLUS, BathSpec, Jump, LindbladModel,
                                   assemble_lindbladian, devectorize, dissipator,
                                   dlindbladian_df, fermi, hamiltonian_superop, tls_preset,
                                   trace_functional, vectorize)


def random_rho(rng, d=2):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def apply(sup, rho):
    return devectorize(sup @ vectorize(rho))


def test_vectorization_convention():
    rng = np.random.default_rng(0)
    a, b, r = (rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(np.kron(a, b.T) @ vectorize(r), vectorize(a @ r @ b))
    assert np.array_equal(devectorize(vectorize(r)), r)


def test_dissipator_zero_rate():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2))
    assert np.abs(apply(dissipator(0.0, x), random_rho(rng))).max() == 0


def test_dissipator_lowering_on_excited_state():
    # basis order (e, g): sigma_- maps e to g
    excited = np.diag([1.0, 0.0])
    out = apply(dissipator(0.7, SIGMA_MINUS), excited)
    assert np.allclose(out, 0.7 * np.diag([-1.0, 1.0]), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 10.0))
def test_dissipator_trace_preserving(seed, gamma):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert abs(np.trace(apply(dissipator(gamma, x), random_rho(rng, 3)))) <= 1e-12 * max(gamma, 1)


def test_hamiltonian_superop():
    h = np.diag([0.3, -0.3])
    assert np.abs(apply(hamiltonian_superop(h), np.diag([0.4, 0.6]))).max() == 0
    eps = 1.3
    coh = np.array([[0, 1], [0, 0]], dtype=complex)  # |e><g|
    out = apply(hamiltonian_superop(eps / 2 * np.diag([1.0, -1.0])), coh)
    assert np.allclose(out, -1j * eps * coh)
    rng = np.random.default_rng(2)
    assert abs(np.trace(apply(hamiltonian_superop(h), random_rho(rng)))) < 1e-15
    with pytest.raises(InvalidArgument):
        hamiltonian_superop(np.array([[0, 1], [0, 0]]))


def test_fermi():
    assert fermi(0.0) == 0.5
    assert np.isclose(fermi(np.log(3)), 0.25, rtol=1e-15)
    x = np.random.default_rng(3).normal(scale=50, size=100)
    assert np.allclose(fermi(x) + fermi(-x), 1.0, atol=1e-15)
    assert np.all(np.isfinite(fermi(np.array([-1e4, 1e4]))))


def test_tls_preset_validation_and_params():
    m = tls_preset()
    assert m.params == dict(delta=1.0, gamma=1.0, beta_hot=1.0, beta_cold=2.0)
    with pytest.raises(InvalidArgument):
        tls_preset(beta_hot=2.0, beta_cold=1.0)


def test_baths_off_is_coherent(tls):
    gen = assemble_lindbladian(tls, np.array([0.0, 0.0, 0.0]))
    assert np.allclose(gen, -1j * np.kron(tls.h0, np.eye(2)) + 1j * np.kron(np.eye(2), tls.h0.T))


def stationary(gen):
    w, v = np.linalg.eig(gen)
    rho = devectorize(v[:, np.argmin(np.abs(w))])
    return np.real(rho / np.trace(rho))


def test_single_bath_fixed_point(tls):
    rho = stationary(assemble_lindbladian(tls, np.array([0.0, 1.0, 0.0])))
    assert np.isclose(rho[0, 0], fermi(1.0), atol=1e-13)
    assert np.isclose(rho[0, 0], 0.2689414213699951, atol=1e-13)


def test_linear_in_bath_switch(tls):
    f = np.array([0.05, 1.0, 0.3])
    g = f.copy()
    g[1] = 2.0
    diff = assemble_lindbladian(tls, g) - assemble_lindbladian(tls, f)
    assert np.allclose(diff, tls.bath_superop(f, 0), atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.5, 0.5))
def test_detailed_balance(f0):
    m = tls_preset()
    f = np.array([f0, 1.0, 1.0])
    (up1, down1), (up2, down2) = m.rates(f)
    assert np.isclose(up1 / down1, np.exp(-(1 + f0)), rtol=1e-12)
    assert np.isclose(up2 / down2, np.exp(-2 * (1 + f0)), rtol=1e-12)


def test_gap_derivative_baths_off(tls):
    d = dlindbladian_df(tls, np.array([0.1, 0.0, 0.0]), 0)
    v0 = tls.couplings[0]
    assert np.array_equal(d, -1j * (np.kron(v0, np.eye(2)) - np.kron(np.eye(2), v0.T)))


@pytest.mark.parametrize("k", [0, 1, 2])
def test_derivative_finite_difference(tls, k):
    f = np.array([0.07, 0.6, 0.4])
    h = 1e-5
    e = np.zeros(3)
    e[k] = h
    fd = (assemble_lindbladian(tls, f + e) - assemble_lindbladian(tls, f - e)) / (2 * h)
    assert np.abs(fd - dlindbladian_df(tls, f, k)).max() < 1e-9


def test_hot_switch_derivative(tls):
    f = np.array([0.1, 0.3, 0.8])
    d = dlindbladian_df(tls, f, 1)
    eps = 1.1
    expect = (fermi(eps) * dissipator(1.0, SIGMA_PLUS) + fermi(-eps) * dissipator(1.0, SIGMA_MINUS))
    assert np.allclose(d, expect, atol=1e-15)


def test_generator_trace_preserving(tls):
    f = np.array([[0.2, 1.0, 0.0], [-0.1, 0.0, 1.0], [0.0, 0.5, 0.5]])
    gens = assemble_lindbladian(tls, f)
    assert np.abs(trace_functional(2) @ gens).max() < 1e-15


def test_negative_rate_rejected():
    bad = Jump(1.0, SIGMA_MINUS, lambda f: np.full(np.shape(f)[:-1], -1.0),
               lambda f: np.zeros(np.shape(f)))
    m = LindbladModel(h0=np.diag([0.5, -0.5]), couplings=(np.diag([0.5, -0.5]),),
                      baths=(BathSpec(1.0, (bad,)),))
    with pytest.raises(ModelEvaluationError):
        assemble_lindbladian(m, np.array([0.0]))
