import numpy as np
import pytest

from conftest import DELTA, TAU, make_problem, random_u
from floquet_qtm import oracle
from floquet_qtm import spectral as sp
from floquet_qtm.controls import ControlProtocol, Stroke
from floquet_qtm.liouville import fermi, tls_preset

# maximum of the short-period constant-gap power at delta = 0.2, beta = (1, 2), gamma = 1
OTTO_MAX_POWER = 0.00677894634665693
OTTO_MAX_EPS = (1.2, 0.8726756760126283)
PERIODS = TAU * np.array([0.125, 0.25, 0.5, 1.0, 2.0])


def test_static_propagation_fixed_point(tls):
    p = ControlProtocol(TAU, 1, DELTA, params=[0.1, 0, 0], strokes=(Stroke(0.0, 1.0, (1.0, 0.0)),))
    res = oracle.propagate(tls, p, rho0=np.diag([0.0, 1.0]), steps_per_cycle=512)
    target = np.diag([fermi(1.1), fermi(-1.1)])
    assert np.abs(res.rho - target).max() < 1e-8


def test_trace_and_agreement_with_spectral(tls):
    prob = make_problem(n_harmonics=129)
    u = random_u(np.random.default_rng(0))
    res = oracle.propagate(tls, prob.protocol, u, steps_per_cycle=4096)
    errs = res.invariant_errors()
    assert errs["trace"] < 1e-10 and errs["min_eigenvalue"] > 0
    ness = prob.solve(u)
    coeff = np.abs(res.fourier_coefficients(ness.grid.harmonics) - ness.coeffs).max()
    assert coeff < 1e-6
    pointwise = np.abs(sp.synthesize(ness, res.t) - res.rho).max()
    assert pointwise < 5e-3  # limited by the truncated switch discontinuities


def test_fluctuation_propagation(tls):
    prob = make_problem(n_harmonics=129, fluctuations=True)
    u = random_u(np.random.default_rng(1), scale=1.5)
    ev = prob.evaluate(u, gradient=False)
    aux = oracle.propagate_fluctuation(tls, prob.protocol, u, steps_per_cycle=8192)
    assert np.abs(np.trace(aux.rho, axis1=1, axis2=2)).max() < 1e-10
    dp = oracle.cycle_power_fluctuation(aux, tls, prob.protocol.with_params(u))
    assert abs(dp - ev.ledger.delta_power) <= 1e-5 * abs(ev.ledger.delta_power)
    assert np.abs(aux.fourier_coefficients(prob.grid.harmonics) - ev.aux.coeffs).max() < 1e-5


def test_fluctuation_undriven_vanishes(tls):
    p = ControlProtocol(TAU, 1, DELTA, params=[0.05, 0, 0])
    aux = oracle.propagate_fluctuation(tls, p, steps_per_cycle=512)
    assert np.abs(aux.rho).max() < 1e-12


def test_otto_formula_basics():
    assert oracle.otto_power(TAU, 1.1, 1.1) == 0.0
    small = oracle.otto_power(1e-6, 1.2, 0.9)
    assert np.isclose(small, oracle.otto_power_limit(1.2, 0.9), rtol=1e-10)


@pytest.mark.parametrize("period", PERIODS)
def test_closed_form_matches_two_stroke_simulation(tls, period):
    e1, e2 = OTTO_MAX_EPS
    sim = oracle.simulate_two_stroke(tls, period, e1, e2)
    assert abs(sim - oracle.otto_power(period, e1, e2)) <= 1e-6 * abs(sim)
    rk = oracle.simulate_two_stroke(tls, period, e1, e2, method="rk4", steps=1024)
    assert abs(rk - sim) <= 1e-6 * abs(sim)


def test_printed_prefactor_is_rejected(tls):
    e1, e2 = OTTO_MAX_EPS
    sims = np.array([oracle.simulate_two_stroke(tls, t, e1, e2) for t in PERIODS])
    printed = oracle.otto_power_printed(PERIODS, e1, e2)
    assert np.all(np.abs(printed - sims) > 0.2 * np.abs(sims))


def test_zero_period_limit(tls):
    e1, e2 = OTTO_MAX_EPS
    lim = oracle.richardson_zero_limit(lambda t: oracle.simulate_two_stroke(tls, t, e1, e2),
                                       TAU / 8)
    assert abs(lim - oracle.otto_power_limit(e1, e2)) <= 1e-4 * abs(lim)


def test_otto_max_golden():
    best = oracle.otto_max()
    assert np.isclose(best.power, OTTO_MAX_POWER, rtol=1e-10)
    assert np.isclose(best.eps1, OTTO_MAX_EPS[0], atol=1e-9)
    assert np.isclose(best.eps2, OTTO_MAX_EPS[1], atol=1e-6)
    fine = oracle.otto_max(n_grid=801)
    assert abs(fine.eps2 - best.eps2) < 1e-4 and abs(fine.eps1 - best.eps1) < 1e-4


def test_otto_max_equal_temperatures():
    best = oracle.otto_max(beta_hot=1.0, beta_cold=1.0)
    assert best.power == pytest.approx(0.0, abs=1e-15)


def test_baseline_monotone():
    base = [oracle.constant_gap_baseline(t) for t in PERIODS]
    assert np.all(np.diff(base) < 0)
    assert base[0] >= 0.95 * OTTO_MAX_POWER


def test_finite_difference_exactness():
    a = np.array([1.0, -2.0, 0.5])
    g = oracle.finite_difference_gradient(lambda u: a @ u, np.array([0.3, 0.2, 0.1]), 1e-3)
    assert np.allclose(g, a, atol=1e-12)
    q = oracle.finite_difference_gradient(lambda u: (u @ u, None), np.array([0.3, 0.2, 0.1]),
                                          1e-2)
    assert np.allclose(q, [0.6, 0.4, 0.2], atol=1e-13)


def test_rk4_two_stroke_uses_model(tls):
    hot = tls_preset(gamma=2.0)
    assert oracle.simulate_two_stroke(hot, TAU, 1.2, 0.8) != oracle.simulate_two_stroke(
        tls, TAU, 1.2, 0.8)
