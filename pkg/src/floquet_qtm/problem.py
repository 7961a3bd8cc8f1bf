"""Model + protocol + merit: the objective handed to the optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import spectral as sp
from .controls import ControlProtocol, penalty_correction, penalty_curvature, spectral_penalty
from .liouville import LindbladModel
from .observables import (EnergyLedger, MeritDefinition, cycle_averages, fluctuation_gradient,
                          merit_eval, power_fluctuation)


@dataclass
class Evaluation:
    protocol: ControlProtocol
    ness: sp.SpectralState
    ledger: EnergyLedger
    merit: float
    merit_grad: np.ndarray | None
    penalty: float
    ness_grad: np.ndarray | None = None
    aux: sp.SpectralAuxiliary | None = None
    aux_grad: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ThermalMachineProblem:
    """Everything needed to turn control parameters u into (G, grad G)."""

    model: LindbladModel
    protocol: ControlProtocol
    grid: sp.HarmonicGrid
    merit: MeritDefinition = MeritDefinition()
    fluctuations: bool = False
    method: str = "svd"
    energy: str = "projected"

    def __post_init__(self):
        if abs(self.grid.period - self.protocol.period) > 1e-12 * self.protocol.period:
            raise ValueError("grid and protocol periods differ")
        if self.model.n_controls != self.protocol.n_controls:
            raise ValueError("model and protocol disagree on the number of controls")

    @property
    def n_params(self) -> int:
        return self.protocol.n_params

    def with_grid(self, n_harmonics: int) -> "ThermalMachineProblem":
        return replace(self, grid=self.grid.refined(n_harmonics))

    def floquet(self, u):
        protocol = self.protocol.with_params(u)
        quad = sp.grid_quadrature(protocol, self.grid)
        lq = sp.lindbladian_harmonics(self.model, protocol, self.grid, quad)
        return protocol, quad, sp.build_floquet_matrix(lq, self.grid)

    def solve(self, u) -> sp.SpectralState:
        return sp.solve_ness(self.floquet(u)[2])

    def evaluate(self, u, gradient: bool = True, diagnostics: bool = True) -> Evaluation:
        """Solve at u and assemble the merit; ``diagnostics=False`` skips the cross-checks."""
        protocol, quad, fm = self.floquet(u)
        ness = sp.solve_ness(fm)
        dfm = ness_grad = None
        if gradient:
            dfm = sp.ParamDerivative(self.model, protocol, self.grid, quad)
            ness_grad = sp.solve_ness_gradient(fm, dfm, ness, method=self.method)
        ledger = cycle_averages(ness, self.model, protocol, ness_grad, quad, self.energy)

        aux = aux_grad = None
        if self.fluctuations or self.merit.needs_fluctuations:
            h = sp.build_fluctuation_rhs(ness, self.model, protocol, quad)
            aux = sp.solve_fluctuation(fm, h, ness, method=self.method)
            ledger.delta_power = power_fluctuation(aux, self.model, protocol, quad)
            if gradient:
                dh = sp.fluctuation_rhs_gradient(ness, ness_grad, self.model, protocol, quad)
                aux_grad = sp.solve_fluctuation_gradient(fm, dfm, aux, dh, ness,
                                                         method=self.method)
                ledger.grad_delta_power = fluctuation_gradient(aux, aux_grad, self.model,
                                                               protocol, quad)

        if self.merit.uses_penalty:
            pen = spectral_penalty(protocol, self.merit.alpha, self.merit.n_pen)
        else:
            pen = (0.0, np.zeros(self.n_params))
        g, dg = merit_eval(self.merit, ledger, pen)
        if not diagnostics:
            return Evaluation(protocol, ness, ledger, g, dg if gradient else None, pen[0],
                              ness_grad, aux, aux_grad, dict(ness.diagnostics))
        other = "pointwise" if self.energy == "projected" else "projected"
        alt = cycle_averages(ness, self.model, protocol, None, quad, other)
        traces = ness.harmonic_traces()
        diagnostics = dict(ness.diagnostics,
                           n_harmonics=self.grid.n_harmonics,
                           quadrature_nodes=quad.size,
                           first_law_residual=ledger.first_law_residual,
                           first_law_relative=ledger.first_law_relative,
                           heat_convention_gap=float(np.max(np.abs(
                               alt.heat_currents - ledger.heat_currents))),
                           **{f"first_law_relative_{other}": alt.first_law_relative},
                           nonzero_harmonic_trace=float(np.abs(np.delete(
                               traces, self.grid.cutoff)).max(initial=0.0)))
        return Evaluation(protocol, ness, ledger, g, dg if gradient else None, pen[0],
                          ness_grad, aux, aux_grad, diagnostics)

    def objective(self, u):
        ev = self.evaluate(u, diagnostics=False)
        return ev.merit, ev.merit_grad

    def curvature(self, u) -> np.ndarray:
        """Known part of the Hessian of -G: the Gauss-Newton matrix of the penalty."""
        if not self.merit.uses_penalty:
            return np.zeros((self.n_params, self.n_params))
        return penalty_curvature(self.protocol.with_params(u), self.merit.alpha, self.merit.n_pen)

    def correction(self, u) -> np.ndarray:
        """Feasibility step that removes above-cutoff content (identity without a penalty)."""
        u = np.asarray(u, dtype=float)
        if not self.merit.uses_penalty:
            return u
        return penalty_correction(self.protocol.with_params(u), self.merit.n_pen)

    def value(self, u) -> float:
        return self.evaluate(u, gradient=False, diagnostics=False).merit
