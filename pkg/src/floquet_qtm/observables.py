"""Energy currents, cycle averages, power fluctuations and merit functions.

Conventions: bath 1 is hot; J_b > 0 is heat flowing into the working
medium; P > 0 is work delivered to the external agent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlProtocol
from .errors import InvalidArgument, UndefinedMerit
from .liouville import LindbladModel, devectorize
from .quadrature import CycleQuadrature
from .spectral import SpectralAuxiliary, SpectralState, grid_quadrature, synthesize

EFFICIENCY_GUARD = 1e-12
MERIT_KINDS = ("power", "power_with_penalty", "efficiency", "composed")


def _tr(a, b):
    """Tr[a b] over the trailing two axes."""
    return np.einsum("...ij,...ji->...", a, b)


def _apply(superop, rho):
    d = rho.shape[-1]
    vec = rho.reshape(rho.shape[:-2] + (d * d,))
    return devectorize(np.einsum("...ab,...b->...a", superop, vec), d)


def instantaneous_currents(rho, model: LindbladModel, protocol: ControlProtocol, t):
    """Power p(t) = -Tr[rho f0_dot V0] and heat currents j_b(t) = Tr[L_b(f) rho H(f)].

    ``rho`` has shape (n_t, d, d) matching ``t``.  Returns (p, j) with j of
    shape (n_baths, n_t).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    rho = np.asarray(rho).reshape(t.size, model.dim, model.dim)
    f = protocol.controls(t)
    ham = model.hamiltonian(f)
    p = -protocol.gap_dot(t) * np.real(_tr(rho, model.couplings[0]))
    j = np.array([np.real(_tr(_apply(model.bath_superop(f, b), rho), ham))
                  for b in range(len(model.baths))])
    return p, j


@dataclass
class EnergyLedger:
    power: float
    heat_currents: np.ndarray
    period: float
    delta_power: float | None = None
    grad_power: np.ndarray | None = None
    grad_heat: np.ndarray | None = None
    grad_delta_power: np.ndarray | None = None

    @property
    def work(self) -> float:
        return self.power * self.period

    @property
    def heats(self) -> np.ndarray:
        return self.heat_currents * self.period

    @property
    def first_law_residual(self) -> float:
        return float(abs(self.power - np.sum(self.heat_currents)))

    @property
    def first_law_relative(self) -> float:
        scale = max(abs(self.power), *np.abs(self.heat_currents), 1e-300)
        return self.first_law_residual / scale

    @property
    def efficiency(self) -> float:
        return self.power / self.heat_currents[0]


@dataclass
class _Samples:
    """NESS (and gradient) at the nodes of the cycle quadrature."""

    quad: CycleQuadrature
    rho: np.ndarray
    drho: np.ndarray | None
    omegas: np.ndarray

    @property
    def t(self):
        return self.quad.t


def _sample(ness: SpectralState, ness_grad, protocol: ControlProtocol, quad=None) -> _Samples:
    quad = grid_quadrature(protocol, ness.grid) if quad is None else quad
    rho = synthesize(ness, quad.t)
    drho = None if ness_grad is None else synthesize((ness_grad, ness.grid), quad.t)
    return _Samples(quad, rho, drho, ness.grid.omegas)


def _power(samples: _Samples, model, protocol):
    v0 = model.couplings[0]
    w = samples.quad.w
    fdot = protocol.gap_dot(samples.t)
    e0 = np.real(_tr(samples.rho, v0))
    value = -w @ (fdot * e0)
    if samples.drho is None:
        return value, None
    dfdot = protocol.gap_dot_jacobian(samples.t)
    grad = -((w * e0) @ dfdot + np.real(_tr(samples.drho, v0)) @ (w * fdot))
    return value, grad


def band_project(quad: CycleQuadrature, values: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Values at the nodes of the truncation of a periodic function to the given harmonics."""
    shape = values.shape
    coeffs = quad.coefficients(values.reshape(shape[0], -1), np.round(
        omegas * quad.period / (2 * np.pi)).astype(int))
    out = np.exp(1j * np.multiply.outer(quad.t, omegas)) @ coeffs
    return out.reshape(shape)


def _energy_weights(samples: _Samples, model, protocol, energy: str = "projected"):
    """Controls, Hamiltonian weighing the dissipated energy, and its u-jacobians.

    Returns (f, ham, jac, jac_h): jac = d f0 / du at the nodes (None without
    gradients) and jac_h its counterpart for the energy weight.
    """
    f = protocol.quadrature_controls(samples.quad)
    ham = model.hamiltonian(f)
    jac = jac_h = None if samples.drho is None else protocol.gap_jacobian(samples.t)
    if energy == "projected":
        ham = band_project(samples.quad, ham, samples.omegas)
        if jac is not None:
            jac_h = np.real(band_project(samples.quad, jac, samples.omegas))
    elif energy != "pointwise":
        raise InvalidArgument(f"unknown energy convention {energy!r}")
    return f, ham, jac, jac_h


def _heat(samples: _Samples, model, protocol, b: int, energy: str = "projected", weights=None):
    w = samples.quad.w
    f, ham, jac, jac_h = _energy_weights(samples, model, protocol, energy) if weights is None \
        else weights
    lb = model.bath_superop(f, b)
    lrho = _apply(lb, samples.rho)
    value = w @ np.real(_tr(lrho, ham))
    if samples.drho is None:
        return value, None
    v0 = model.couplings[0]
    dlb = model.bath_superop_df(f, b)[:, 0]
    term_rate = np.real(_tr(_apply(dlb, samples.rho), ham))[:, None] * jac
    term_ham = np.real(_tr(lrho, v0))[:, None] * jac_h
    term_rho = np.real(_tr(_apply(lb[None], samples.drho), ham[None])).T
    return value, w @ (term_rate + term_ham + term_rho)


def cycle_averages(ness: SpectralState, model: LindbladModel, protocol: ControlProtocol,
                   ness_grad: np.ndarray | None = None, quad=None,
                   energy: str = "projected") -> EnergyLedger:
    """Cycle-averaged power and heat currents (with gradients if ``ness_grad`` given).

    Integrals use the composite Gauss rule of :mod:`quadrature`, whose
    panels end at the bath switches and at the clamp knots.

    ``energy`` selects the Hamiltonian that weighs the dissipated energy:
    ``"projected"`` uses its truncation to the harmonics kept in rho, which
    makes P = sum_b J_b an identity of the truncated equations whenever the
    Hamiltonians at different times commute; ``"pointwise"`` uses H(t)
    itself.  Both converge to the same limit as N grows, and their
    difference estimates the truncation error.
    """
    samples = _sample(ness, ness_grad, protocol, quad)
    p, dp = _power(samples, model, protocol)
    weights = _energy_weights(samples, model, protocol, energy)
    heats = [_heat(samples, model, protocol, b, energy, weights)
             for b in range(len(model.baths))]
    ledger = EnergyLedger(power=float(p), heat_currents=np.array([h[0] for h in heats]),
                          period=protocol.period)
    if ness_grad is not None:
        ledger.grad_power = dp
        ledger.grad_heat = np.array([h[1] for h in heats])
    return ledger


def power_gradient(ness, ness_grad, model, protocol) -> np.ndarray:
    return _power(_sample(ness, ness_grad, protocol), model, protocol)[1]


def heat_gradient(ness, ness_grad, model, protocol, b: int,
                  energy: str = "projected") -> np.ndarray:
    return _heat(_sample(ness, ness_grad, protocol), model, protocol, b, energy)[1]


def power_fluctuation(aux: SpectralAuxiliary, model: LindbladModel,
                      protocol: ControlProtocol, quad=None) -> float:
    """Delta P = (1/T) int Tr[s f0_dot V0] dt."""
    quad = grid_quadrature(protocol, aux.grid) if quad is None else quad
    s = synthesize(aux, quad.t)
    return float(quad.w @ (protocol.gap_dot(quad.t) * np.real(_tr(s, model.couplings[0]))))


def fluctuation_gradient(aux: SpectralAuxiliary, aux_grad: np.ndarray, model: LindbladModel,
                         protocol: ControlProtocol, quad=None) -> np.ndarray:
    """Gradient of Delta P, including the term from d(f0_dot)/du acting on s."""
    quad = grid_quadrature(protocol, aux.grid) if quad is None else quad
    t, w = quad.t, quad.w
    v0 = model.couplings[0]
    s = synthesize(aux, t)
    ds = synthesize((aux_grad, aux.grid), t)
    fdot = protocol.gap_dot(t)
    dfdot = protocol.gap_dot_jacobian(t)
    return np.real(_tr(ds, v0)) @ (w * fdot) + (w * np.real(_tr(s, v0))) @ dfdot


@dataclass(frozen=True)
class MeritDefinition:
    """What to maximize.

    power:              G = P
    power_with_penalty: G = P - penalty
    efficiency:         G = P / J_1 - penalty
    composed:           G = w_P P + sum_b w_J[b] J_b + w_dP Delta P - penalty
    """

    kind: str = "power_with_penalty"
    alpha: float = 0.0
    n_pen: int = 64
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MERIT_KINDS:
            raise InvalidArgument(f"unknown merit kind {self.kind!r}")
        if self.alpha < 0:
            raise InvalidArgument("penalty weight must be non-negative")

    @property
    def uses_penalty(self) -> bool:
        return self.kind != "power" and self.alpha > 0

    @property
    def needs_fluctuations(self) -> bool:
        return self.kind == "composed" and self.weights.get("delta_power", 0.0) != 0.0


def merit_eval(defn: MeritDefinition, ledger: EnergyLedger, penalty=(0.0, None)):
    """Compose (G, grad G) from the ledger and the (value, gradient) of the penalty."""
    pen, dpen = penalty
    if not defn.uses_penalty:
        pen, dpen = 0.0, None
    grad_ok = ledger.grad_power is not None
    if defn.kind in ("power", "power_with_penalty"):
        g = ledger.power
        dg = ledger.grad_power
    elif defn.kind == "efficiency":
        j1 = ledger.heat_currents[0]
        if abs(j1) < EFFICIENCY_GUARD:
            raise UndefinedMerit(f"efficiency undefined: |J_1| = {abs(j1):.3e}")
        g = ledger.power / j1
        dg = None
        if grad_ok:
            dg = (ledger.grad_power * j1 - ledger.power * ledger.grad_heat[0]) / j1 ** 2
    else:
        w = defn.weights
        wj = np.asarray(w.get("heat", np.zeros(len(ledger.heat_currents))), dtype=float)
        wdp = w.get("delta_power", 0.0)
        g = w.get("power", 0.0) * ledger.power + wj @ ledger.heat_currents
        if wdp:
            if ledger.delta_power is None:
                raise InvalidArgument("merit needs the power fluctuation but the ledger lacks it")
            g += wdp * ledger.delta_power
        dg = None
        if grad_ok:
            dg = w.get("power", 0.0) * ledger.grad_power + wj @ ledger.grad_heat
            if wdp:
                dg = dg + wdp * ledger.grad_delta_power
    g = g - pen
    if dg is not None and dpen is not None:
        dg = dg - dpen
    return float(g), dg
