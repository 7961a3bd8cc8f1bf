"""Composite Gauss-Legendre rule over one period.

Panels break at stroke boundaries (the bath switches jump there) and at
every time the Fourier part of the gap control crosses a clamp knot (the
clamp is only C^1, so its second derivative jumps there).  Inside a panel
every integrand is smooth and Gauss-Legendre converges fast.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .controls import ControlProtocol, fourier_basis

MIN_PANEL_NODES = 4
BISECTION_STEPS = 52


@lru_cache(maxsize=None)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def level_crossings(protocol: ControlProtocol, levels) -> np.ndarray:
    """Times in [0, T) where the Fourier part of f0 crosses any of ``levels``.

    Sign changes on a fine grid are bracketed and refined by vectorized
    bisection down to rounding level.
    """
    T = protocol.period
    n = max(64 * protocol.n_modes, 1024)
    t = T * np.arange(n + 1) / n
    u = protocol.params
    x = fourier_basis(t, T, protocol.n_modes) @ u
    levels = np.asarray(levels, dtype=float)
    g = x[:, None] - levels[None, :]
    exact_t, _ = np.nonzero(g[:-1] == 0)
    i, j = np.nonzero(g[:-1] * g[1:] < 0)
    lo, hi, c = t[i], t[i + 1], levels[j]
    glo = g[i, j]
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        gm = fourier_basis(mid, T, protocol.n_modes) @ u - c
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
    roots = np.concatenate([t[exact_t], 0.5 * (lo + hi)])
    return np.mod(roots, T)


def breakpoints(protocol: ControlProtocol) -> np.ndarray:
    T = protocol.period
    pts = [s.start * T for s in protocol.strokes]
    if protocol.flavor == "clamped":
        knots = protocol.clamp.knots
        pts.extend(level_crossings(protocol, np.concatenate([knots, -knots])))
    pts = np.unique(np.mod(np.asarray(pts, dtype=float), T))
    # merge breakpoints closer than the rounding level
    keep = np.concatenate([[True], np.diff(pts) > 1e-13 * T])
    return pts[keep]


@dataclass(frozen=True)
class CycleQuadrature:
    """Nodes and weights with sum_i w_i g(t_i) ~ (1/T) int_0^T g(t) dt."""

    t: np.ndarray
    w: np.ndarray
    stroke: np.ndarray
    period: float
    _phase_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def size(self) -> int:
        return self.t.size

    def phases(self, harmonics) -> np.ndarray:
        """w_i exp(-i w_q t_i), shape (n_q, n_nodes)."""
        harmonics = np.asarray(harmonics)
        key = harmonics.tobytes()
        if key not in self._phase_cache:
            omega = 2 * np.pi / self.period * harmonics
            out = np.exp(-1j * np.multiply.outer(omega, self.t)) * self.w
            out.flags.writeable = False
            self._phase_cache[key] = out
        return self._phase_cache[key]

    def coefficients(self, values, harmonics) -> np.ndarray:
        """Fourier coefficients (1/T) int values(t) exp(-i w_q t) dt along axis 0."""
        return np.tensordot(self.phases(harmonics), values, axes=(1, 0))

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.w, values, axes=(0, 0))


def cycle_quadrature(protocol: ControlProtocol, density: int) -> CycleQuadrature:
    """Composite rule with about ``density`` nodes per period plus a few per panel."""
    T = protocol.period
    cuts = np.concatenate([breakpoints(protocol), [T]])
    ts, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = int(np.ceil(density * (b - a) / T)) + MIN_PANEL_NODES
        x, w = _legendre(n)
        ts.append(0.5 * (b - a) * x + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w / T)
    t = np.concatenate(ts)
    return CycleQuadrature(t, np.concatenate(ws), protocol.stroke_index(t), T)
