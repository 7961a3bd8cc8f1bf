"""Independent checks: time-domain propagation, constant-gap Otto formulas, finite differences.

Nothing here uses the Fourier-domain solver; only generator assembly is
shared with it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .controls import ControlProtocol
from .errors import InvalidArgument, NonConvergence
from .liouville import LindbladModel, assemble_lindbladian, devectorize, fermi, vectorize


@dataclass
class PropagationResult:
    """Samples over the final cycle at t_n = n T / S, n = 0 .. S (endpoint included)."""

    t: np.ndarray
    rho: np.ndarray
    metric: float
    cycles: int

    @property
    def period(self) -> float:
        return float(self.t[-1])

    def invariant_errors(self) -> dict:
        tr = np.trace(self.rho, axis1=1, axis2=2)
        herm = np.abs(self.rho - np.conj(np.swapaxes(self.rho, 1, 2))).max()
        herm_part = 0.5 * (self.rho + np.conj(np.swapaxes(self.rho, 1, 2)))
        return dict(trace=float(np.abs(tr - 1).max()), hermiticity=float(herm),
                    min_eigenvalue=float(np.linalg.eigvalsh(herm_part).min()))

    def fourier_coefficients(self, harmonics) -> np.ndarray:
        """Discrete Fourier coefficients of the cycle samples, shape (d^2, len(harmonics))."""
        samples = self.rho[:-1].reshape(self.rho.shape[0] - 1, -1)
        c = np.fft.fft(samples, axis=0) / samples.shape[0]
        return c[np.mod(np.asarray(harmonics), samples.shape[0])].T

    def cycle_average(self, values) -> float:
        """Trapezoidal mean of per-sample values over the cycle."""
        v = np.asarray(values)
        return float(np.real(np.sum(v[:-1] + v[1:]) / (2 * (v.size - 1))))


def _stroke_steps(protocol: ControlProtocol, steps: int) -> np.ndarray:
    """Stroke index of each step; checks that stroke boundaries fall on step boundaries."""
    for s in protocol.strokes:
        k = s.start * steps
        if abs(k - round(k)) > 1e-9:
            raise InvalidArgument(
                f"stroke boundary at {s.start}T does not fall on a step boundary "
                f"for {steps} steps per cycle")
    mid = (np.arange(steps) + 0.5) * protocol.period / steps
    return protocol.stroke_index(mid)


def _step_controls(protocol: ControlProtocol, t: np.ndarray, strokes: np.ndarray) -> np.ndarray:
    table = np.array([s.switches for s in protocol.strokes], dtype=float)
    return np.column_stack([protocol.gap(t), table[strokes]])


def _rk4_matrices(model: LindbladModel, protocol: ControlProtocol, steps: int):
    """Linear RK4 step maps M_n and the generators at the stage times."""
    if steps < 2 or steps % 2:
        raise InvalidArgument("steps_per_cycle must be even and >= 2")
    h = protocol.period / steps
    t0 = np.arange(steps) * h
    strokes = _stroke_steps(protocol, steps)
    gens = [assemble_lindbladian(model, _step_controls(protocol, t0 + c * h, strokes))
            for c in (0.0, 0.5, 1.0)]
    l1, l2, l3 = gens
    eye = np.eye(l1.shape[-1])
    k1 = l1
    k2 = l2 @ (eye + 0.5 * h * k1)
    k3 = l2 @ (eye + 0.5 * h * k2)
    k4 = l3 @ (eye + h * k3)
    return eye + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), gens, h, strokes


def _cumulative(mats: np.ndarray) -> np.ndarray:
    """C_0 = I, C_{n+1} = M_n C_n; shape (S + 1, D, D)."""
    out = np.empty((mats.shape[0] + 1,) + mats.shape[1:], dtype=mats.dtype)
    out[0] = np.eye(mats.shape[-1])
    for n, m in enumerate(mats):
        out[n + 1] = m @ out[n]
    return out


def propagate(model: LindbladModel, protocol: ControlProtocol, u=None, rho0=None,
              cycles: int = 2000, steps_per_cycle: int = 4096,
              tol: float = 1e-10) -> PropagationResult:
    """Classical RK4 over whole cycles until the orbit repeats.

    Steps are aligned with the stroke boundaries, so the switches never jump
    inside a step.  The cycle is iterated through its (exact) RK4 cycle map
    until the max-norm change of the whole trajectory between consecutive
    cycles is at most ``tol``.
    """
    if u is not None:
        protocol = protocol.with_params(u)
    d = model.dim
    rho0 = np.eye(d) / d if rho0 is None else np.asarray(rho0, dtype=complex)
    mats, _, h, _ = _rk4_matrices(model, protocol, steps_per_cycle)
    cum = _cumulative(mats)
    cycle_map = cum[-1]
    x = vectorize(rho0)
    metric = np.inf
    for k in range(1, cycles + 1):
        x_new = cycle_map @ x
        metric = float(np.abs(cum @ (x_new - x)).max())
        x = x_new
        if metric <= tol:
            t = h * np.arange(steps_per_cycle + 1)
            return PropagationResult(t, devectorize(cum @ x, d), metric, k)
    raise NonConvergence(f"no periodic orbit within {cycles} cycles (change {metric:.3e})",
                         metric=metric)


def _fluctuation_source(rho, hdot):
    tr = np.einsum("...ij,...ji->...", rho, hdot)
    return rho @ hdot + hdot @ rho - 2 * tr[..., None, None] * rho


def propagate_fluctuation(model: LindbladModel, protocol: ControlProtocol, u=None,
                          ness: PropagationResult | None = None, cycles: int = 2000,
                          steps_per_cycle: int = 4096, tol: float = 1e-9) -> PropagationResult:
    """Periodic solution of s_dot = L s + {rho, H_dot} - 2 Tr[rho H_dot] rho.

    ``ness`` must sample the periodic state with twice ``steps_per_cycle``
    steps (RK4 stages need rho at half steps); it is computed if omitted.
    Starts from s = 0.
    """
    if u is not None:
        protocol = protocol.with_params(u)
    if ness is None:
        ness = propagate(model, protocol, steps_per_cycle=2 * steps_per_cycle)
    if ness.rho.shape[0] != 2 * steps_per_cycle + 1:
        raise InvalidArgument("ness must be sampled with twice the steps per cycle")
    d = model.dim
    mats, gens, h, strokes = _rk4_matrices(model, protocol, steps_per_cycle)
    v0 = model.couplings[0]
    t_half = ness.t
    # the jump of f0_dot at stroke boundaries is absent (f0 is C^1), so one sample suffices
    hdot = protocol.gap_dot(t_half)[:, None, None] * v0
    src = _fluctuation_source(ness.rho, hdot).reshape(t_half.size, d * d)
    c1, c2, c3 = src[0:-1:2], src[1::2], src[2::2]
    _, l2, l3 = gens
    k1 = c1
    k2 = np.einsum("nab,nb->na", l2, 0.5 * h * k1) + c2
    k3 = np.einsum("nab,nb->na", l2, 0.5 * h * k2) + c2
    k4 = np.einsum("nab,nb->na", l3, h * k3) + c3
    b = h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    cum = _cumulative(mats)
    inhom = np.zeros((steps_per_cycle + 1, d * d), dtype=complex)
    for n in range(steps_per_cycle):
        inhom[n + 1] = mats[n] @ inhom[n] + b[n]
    s = np.zeros(d * d, dtype=complex)
    metric = np.inf
    for k in range(1, cycles + 1):
        s_new = cum[-1] @ s + inhom[-1]
        metric = float(np.abs(cum @ (s_new - s)).max())
        s = s_new
        if metric <= tol:
            traj = cum @ s + inhom
            return PropagationResult(h * np.arange(steps_per_cycle + 1), devectorize(traj, d),
                                     metric, k)
    raise NonConvergence(f"fluctuation operator not periodic within {cycles} cycles "
                         f"(change {metric:.3e})", metric=metric)


def cycle_power(result: PropagationResult, model: LindbladModel, protocol: ControlProtocol) -> float:
    """P = -(1/T) int f0_dot Tr[V0 rho] dt by the trapezoidal rule."""
    e0 = np.real(np.einsum("tij,ji->t", result.rho, model.couplings[0]))
    return -result.cycle_average(protocol.gap_dot(result.t) * e0)


def cycle_power_fluctuation(aux: PropagationResult, model: LindbladModel,
                            protocol: ControlProtocol) -> float:
    """Delta P = (1/T) int f0_dot Tr[V0 s] dt by the trapezoidal rule."""
    e0 = np.real(np.einsum("tij,ji->t", aux.rho, model.couplings[0]))
    return aux.cycle_average(protocol.gap_dot(aux.t) * e0)


# -- constant-gap two-stroke cycle ----------------------------------------------

def _otto_factor(eps1, eps2, beta_hot, beta_cold):
    return (fermi(beta_hot * eps1) - fermi(beta_cold * eps2)) * (eps1 - eps2)


def otto_power(period, eps1, eps2, gamma=1.0, beta_hot=1.0, beta_cold=2.0):
    """Constant-gap two-stroke power tanh(gamma T / 4) / T * (F(b1 e1) - F(b2 e2)) (e1 - e2)."""
    period = np.asarray(period, dtype=float)
    if np.any(period <= 0):
        raise InvalidArgument("period must be positive")
    return np.tanh(gamma * period / 4) / period * _otto_factor(eps1, eps2, beta_hot, beta_cold)


def otto_power_printed(period, eps1, eps2, gamma=1.0, beta_hot=1.0, beta_cold=2.0):
    """The alternative prefactor 1 / (gamma coth(gamma T / 4)), kept for comparison.

    It tends to T/4 as T -> 0 instead of gamma/4 and fails against the
    two-stroke simulation.
    """
    period = np.asarray(period, dtype=float)
    return np.tanh(gamma * period / 4) / gamma * _otto_factor(eps1, eps2, beta_hot, beta_cold)


def otto_power_limit(eps1, eps2, gamma=1.0, beta_hot=1.0, beta_cold=2.0):
    """T -> 0 limit (gamma / 4) (F(b1 e1) - F(b2 e2)) (e1 - e2)."""
    return gamma / 4 * _otto_factor(eps1, eps2, beta_hot, beta_cold)


@dataclass(frozen=True)
class OttoMaximum:
    power: float
    eps1: float
    eps2: float


def otto_max(gamma=1.0, beta_hot=1.0, beta_cold=2.0, delta=0.2, gap=1.0,
             n_grid: int = 401) -> OttoMaximum:
    """Maximum of the T -> 0 constant-gap power over eps in [gap - delta, gap + delta]^2.

    Dense grid search followed by a bounded local refinement.
    """
    lo, hi = gap - delta, gap + delta
    eps = np.linspace(lo, hi, n_grid)
    e1, e2 = np.meshgrid(eps, eps, indexing="ij")
    vals = otto_power_limit(e1, e2, gamma, beta_hot, beta_cold)
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    res = minimize(lambda x: -otto_power_limit(x[0], x[1], gamma, beta_hot, beta_cold),
                   x0=[eps[i], eps[j]], bounds=[(lo, hi), (lo, hi)], method="L-BFGS-B",
                   options=dict(ftol=1e-15, gtol=1e-13))
    x = res.x if -res.fun >= vals[i, j] else np.array([eps[i], eps[j]])
    return OttoMaximum(float(otto_power_limit(x[0], x[1], gamma, beta_hot, beta_cold)),
                       float(x[0]), float(x[1]))


def constant_gap_baseline(period, gamma=1.0, beta_hot=1.0, beta_cold=2.0, delta=0.2,
                          gap=1.0) -> float:
    """Best constant-gap power at finite T (the maximizer does not depend on T)."""
    best = otto_max(gamma, beta_hot, beta_cold, delta, gap)
    return float(otto_power(period, best.eps1, best.eps2, gamma, beta_hot, beta_cold))


def simulate_two_stroke(model: LindbladModel, period: float, eps1: float, eps2: float,
                        stroke_fraction: float = 0.5, method: str = "expm",
                        steps: int = 2048) -> float:
    """Power of the constant-gap cycle from its exact stroke dynamics.

    The gap jumps from eps2 to eps1 at t = 0 (hot stroke) and back at
    t = cT (cold stroke).  Each stroke has a constant generator, propagated by
    the matrix exponential (``method='expm'``) or by ``steps`` RK4 steps.  The
    work extracted is minus the energy change at the two quenches.
    """
    gap = model.params.get("delta", 1.0)
    d = model.dim
    strokes = [(eps1, (1.0, 0.0), stroke_fraction * period),
               (eps2, (0.0, 1.0), (1 - stroke_fraction) * period)]
    props, hams = [], []
    for eps, sw, dt in strokes:
        f = np.array([[eps - gap, *sw]])
        gen = assemble_lindbladian(model, f)[0]
        if method == "expm":
            props.append(sla.expm(gen * dt))
        elif method == "rk4":
            h = dt / steps
            a = gen * h
            step = np.eye(d * d) + a + a @ a / 2 + a @ a @ a / 6 + a @ a @ a @ a / 24
            props.append(np.linalg.matrix_power(step, steps))
        else:
            raise InvalidArgument(f"unknown method {method!r}")
        hams.append(model.hamiltonian(f)[0])
    cycle = props[1] @ props[0]
    w, v = np.linalg.eig(cycle)
    x = v[:, np.argmin(np.abs(w - 1))]
    rho0 = devectorize(x, d)
    rho0 = rho0 / np.trace(rho0)
    rho_half = devectorize(props[0] @ vectorize(rho0), d)
    work_in = (np.trace(rho0 @ (hams[0] - hams[1])) + np.trace(rho_half @ (hams[1] - hams[0])))
    return float(-np.real(work_in) / period)


def richardson_zero_limit(fun, t0: float, levels: int = 4) -> float:
    """Extrapolate fun(T) to T -> 0 assuming an expansion in even powers of T."""
    table = [[fun(t0 / 2 ** k)] for k in range(levels)]
    for j in range(1, levels):
        for k in range(j, levels):
            prev = table[k - 1][j - 1] if len(table[k - 1]) >= j else None
            table[k].append(table[k][j - 1] + (table[k][j - 1] - prev) / (4 ** j - 1))
    return float(table[-1][-1])


def finite_difference_gradient(objective, u, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar objective (or the first entry of a tuple)."""
    if h <= 0:
        raise InvalidArgument("step must be positive")
    u = np.asarray(u, dtype=float)

    def f(x):
        val = objective(x)
        return float(val[0] if isinstance(val, tuple) else val)

    grad = np.empty(u.size)
    for r in range(u.size):
        e = np.zeros(u.size)
        e[r] = h
        grad[r] = (f(u + e) - f(u - e)) / (2 * h)
    return grad
