"""Periodic control protocols for the gap and the bath switches.

The gap control is a truncated Fourier series passed through an odd clamp
``Phi``: identity up to 3/4 of the amplitude bound, constant above 5/4 of it,
and an Akima cubic blend in between.  The bath couplings are piecewise
constant over strokes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.interpolate import Akima1DInterpolator

from .errors import InvalidArgument

FLAVORS = ("clamped", "direct_l1")


def n_params(n_modes: int) -> int:
    return 2 * n_modes + 1


def fourier_basis(t, period: float, n_modes: int) -> np.ndarray:
    """Columns [1, sin w1 t, cos w1 t, sin w2 t, cos w2 t, ...]; shape (n_t, 2M+1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = np.arange(1, n_modes + 1)
    phase = 2 * np.pi / period * np.multiply.outer(t, n)
    out = np.empty(t.shape + (2 * n_modes + 1,))
    out[..., 0] = 1.0
    out[..., 1::2] = np.sin(phase)
    out[..., 2::2] = np.cos(phase)
    return out


def fourier_basis_dot(t, period: float, n_modes: int) -> np.ndarray:
    """Time derivative of :func:`fourier_basis`."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = np.arange(1, n_modes + 1)
    w = 2 * np.pi / period * n
    phase = np.multiply.outer(t, w)
    out = np.empty(t.shape + (2 * n_modes + 1,))
    out[..., 0] = 0.0
    out[..., 1::2] = w * np.cos(phase)
    out[..., 2::2] = -w * np.sin(phase)
    return out


def fourier_series(u, t, period: float, n_modes: int):
    """u0 + sum_n (u_{2n} cos w_n t + u_{2n-1} sin w_n t), w_n = 2 pi n / T."""
    u = np.asarray(u, dtype=float)
    if u.shape != (n_params(n_modes),):
        raise InvalidArgument(f"expected {n_params(n_modes)} parameters, got shape {u.shape}")
    scalar = np.ndim(t) == 0
    val = fourier_basis(t, period, n_modes) @ u
    return val[0] if scalar else val


@lru_cache(maxsize=16)
def _cached_bases(key: bytes, period: float, n_modes: int):
    t = np.frombuffer(key)
    basis = fourier_basis(t, period, n_modes)
    dbasis = fourier_basis_dot(t, period, n_modes)
    basis.flags.writeable = False
    dbasis.flags.writeable = False
    return basis, dbasis


def fourier_bases(t, period: float, n_modes: int):
    """(basis, time derivative) at t; memoized for the large node sets reused within a solve."""
    t = np.ascontiguousarray(np.atleast_1d(np.asarray(t, dtype=float)))
    if t.ndim == 1 and t.size >= 64:
        return _cached_bases(t.tobytes(), float(period), int(n_modes))
    return fourier_basis(t, period, n_modes), fourier_basis_dot(t, period, n_modes)


class ClampFunction:
    """Odd saturating map with |Phi(x)| <= delta, C^1 everywhere.

    The blend on (3/4 delta, 5/4 delta) is an Akima spline through knots
    spaced delta/8 apart.  Two extra knots on each side lie on the linear and
    the saturated branch, which makes the Akima end slopes exactly 1 and 0.
    Interior knot values are sampled from x - (x - 3/4 delta)^2 / delta, the
    cubic Hermite blend with those end slopes.
    """

    def __init__(self, delta: float):
        if delta <= 0:
            raise InvalidArgument("amplitude bound must be positive")
        self.delta = float(delta)
        self.lo = 0.75 * self.delta
        self.hi = 1.25 * self.delta
        knots = self.delta * np.arange(4, 13) / 8.0
        values = np.where(knots <= self.lo, knots,
                          np.where(knots >= self.hi, self.delta,
                                   knots - (knots - self.lo) ** 2 / self.delta))
        akima = Akima1DInterpolator(knots, values)
        self.knots = knots[2:7]
        self.knot_values = values[2:7]
        self._spline = akima
        self._d1 = akima.derivative(1)
        self._d2 = akima.derivative(2)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        a = np.abs(x)
        sign = np.where(x < 0, -1.0, 1.0)
        lin = a <= self.lo
        sat = a >= self.hi
        blend = ~(lin | sat)
        return x, a, sign, lin, sat, blend

    def __call__(self, x):
        x, a, sign, lin, sat, blend = self._split(x)
        out = np.where(lin, a, self.delta)
        if np.any(blend):
            spline = np.minimum(self._spline(np.where(blend, a, self.lo)), self.delta)
            out = np.where(blend, spline, out)
        return sign * out

    def derivative(self, x):
        x, a, sign, lin, sat, blend = self._split(x)
        out = np.where(lin, 1.0, 0.0)
        if np.any(blend):
            out = np.where(blend, self._d1(np.where(blend, a, self.lo)), out)
        return out

    def second_derivative(self, x):
        # one-sided value of the region containing x
        x, a, sign, lin, sat, blend = self._split(x)
        out = np.zeros_like(a)
        if np.any(blend):
            out = np.where(blend, self._d2(np.where(blend, a, self.lo)), out)
        return sign * out


def clamp(x, delta: float):
    return ClampFunction(delta)(x)


def clamp_derivative(x, delta: float):
    return ClampFunction(delta).derivative(x)


@dataclass(frozen=True)
class Stroke:
    """Interval [start, end) of the cycle, in units of the period, with fixed switch values."""

    start: float
    end: float
    switches: tuple[float, ...]

    def indicator_coefficients(self, n) -> np.ndarray:
        """Fourier coefficients (1/T) int_stroke exp(-i w_n t) dt for integer n."""
        n = np.asarray(n)
        nz = np.where(n == 0, 1, n)
        val = (np.exp(-2j * np.pi * nz * self.start) - np.exp(-2j * np.pi * nz * self.end)) \
            / (2j * np.pi * nz)
        return np.where(n == 0, self.end - self.start, val)


def two_stroke(stroke_fraction: float = 0.5) -> tuple[Stroke, Stroke]:
    if not 0 < stroke_fraction < 1:
        raise InvalidArgument("stroke_fraction must lie in (0, 1)")
    return (Stroke(0.0, stroke_fraction, (1.0, 0.0)),
            Stroke(stroke_fraction, 1.0, (0.0, 1.0)))


def stroke_switches(t, period: float, stroke_fraction: float = 0.5):
    """Hot/cold bath switches (f1, f2): (1, 0) on [0, cT), (0, 1) on [cT, T)."""
    if not 0 < stroke_fraction < 1:
        raise InvalidArgument("stroke_fraction must lie in (0, 1)")
    phase = np.mod(np.asarray(t, dtype=float), period) / period
    hot = (phase < stroke_fraction).astype(float)
    return hot, 1.0 - hot


@dataclass(frozen=True)
class ControlProtocol:
    """Gap control f0(u, t) plus piecewise-constant bath switches.

    Parameters are ordered [u0, s1, c1, s2, c2, ...] (sine before cosine for
    each mode).  ``flavor='direct_l1'`` skips the clamp; the amplitude bound
    is then enforced on the parameters by the optimizer (sum |u| <= delta).
    """

    period: float
    n_modes: int
    delta: float
    omega_max: float = np.inf
    params: np.ndarray = None
    stroke_fraction: float = 0.5
    flavor: str = "clamped"
    strokes: tuple[Stroke, ...] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.period <= 0:
            raise InvalidArgument("period must be positive")
        if self.n_modes < 1:
            raise InvalidArgument("n_modes must be >= 1")
        if self.delta <= 0:
            raise InvalidArgument("amplitude bound must be positive")
        if not self.omega_max > 0:
            raise InvalidArgument("cutoff must be positive")
        if self.flavor not in FLAVORS:
            raise InvalidArgument(f"unknown flavor {self.flavor!r}; expected one of {FLAVORS}")
        u = np.zeros(self.n_params) if self.params is None else np.asarray(self.params, dtype=float)
        if u.shape != (self.n_params,):
            raise InvalidArgument(f"expected {self.n_params} parameters, got shape {u.shape}")
        object.__setattr__(self, "params", u)
        strokes = two_stroke(self.stroke_fraction) if self.strokes is None else tuple(self.strokes)
        if abs(strokes[0].start) > 1e-15 or abs(strokes[-1].end - 1.0) > 1e-15 or any(
                abs(a.end - b.start) > 1e-15 for a, b in zip(strokes, strokes[1:])):
            raise InvalidArgument("strokes must tile [0, 1) in order")
        if len({len(s.switches) for s in strokes}) != 1:
            raise InvalidArgument("all strokes need the same number of switches")
        object.__setattr__(self, "strokes", strokes)

    @property
    def n_params(self) -> int:
        return n_params(self.n_modes)

    @property
    def n_controls(self) -> int:
        return 1 + len(self.strokes[0].switches)

    def with_params(self, u) -> "ControlProtocol":
        return replace(self, params=np.array(u, dtype=float))

    @cached_property
    def clamp(self) -> ClampFunction:
        return ClampFunction(self.delta)

    # -- gap control -------------------------------------------------------

    def _fourier(self, t):
        basis, dbasis = fourier_bases(t, self.period, self.n_modes)
        return basis, dbasis, basis @ self.params, dbasis @ self.params

    def gap(self, t):
        basis, _, x, _ = self._fourier(t)
        return x if self.flavor == "direct_l1" else self.clamp(x)

    def gap_dot(self, t):
        _, _, x, xdot = self._fourier(t)
        if self.flavor == "direct_l1":
            return xdot
        return self.clamp.derivative(x) * xdot

    def gap_jacobian(self, t) -> np.ndarray:
        """d f0 / d u, shape (n_t, n_params)."""
        basis, _, x, _ = self._fourier(t)
        if self.flavor == "direct_l1":
            return basis
        return self.clamp.derivative(x)[:, None] * basis

    def gap_dot_jacobian(self, t) -> np.ndarray:
        """d f0_dot / d u, shape (n_t, n_params)."""
        basis, dbasis, x, xdot = self._fourier(t)
        if self.flavor == "direct_l1":
            return dbasis
        d1 = self.clamp.derivative(x)
        d2 = self.clamp.second_derivative(x)
        return (d2 * xdot)[:, None] * basis + d1[:, None] * dbasis

    # -- switches ----------------------------------------------------------

    def stroke_index(self, t) -> np.ndarray:
        phase = np.mod(np.atleast_1d(np.asarray(t, dtype=float)), self.period) / self.period
        ends = np.array([s.end for s in self.strokes])
        return np.minimum(np.searchsorted(ends, phase, side="right"), len(self.strokes) - 1)

    def switches(self, t) -> np.ndarray:
        table = np.array([s.switches for s in self.strokes])
        return table[self.stroke_index(t)]

    def controls(self, t) -> np.ndarray:
        """Full control vector (f0, f1, ...) at times t, shape (n_t, n_controls)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([self.gap(t), self.switches(t)])

    def stroke_controls(self, t, s: int) -> np.ndarray:
        """Controls with the switches frozen at stroke ``s`` values (smooth in t)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        sw = np.broadcast_to(np.array(self.strokes[s].switches, dtype=float),
                             (t.size, len(self.strokes[s].switches)))
        return np.column_stack([self.gap(t), sw])

    def quadrature_controls(self, quad) -> np.ndarray:
        """Controls at the nodes of a cycle quadrature, switches taken from each node's stroke."""
        table = np.array([s.switches for s in self.strokes], dtype=float)
        return np.column_stack([self.gap(quad.t), table[quad.stroke]])


def _penalty_coefficients(protocol: ControlProtocol, n_pen: int):
    """(c_k, dc_k/du) for the penalized harmonics, or None if nothing is penalized."""
    n_pen = int(n_pen)
    k_min = int(np.floor(protocol.omega_max * protocol.period / (2 * np.pi) + 1e-9)) + 1
    if n_pen < k_min or not np.isfinite(protocol.omega_max):
        return None
    n_grid = max(4 * n_pen, 256)
    t = protocol.period * np.arange(n_grid) / n_grid
    ks = np.arange(k_min, n_pen + 1)
    coeffs = np.fft.fft(protocol.gap(t)) / n_grid
    dcoeffs = np.fft.fft(protocol.gap_jacobian(t), axis=0) / n_grid
    return coeffs[ks], dcoeffs[ks]


def penalty_curvature(protocol: ControlProtocol, alpha: float, n_pen: int) -> np.ndarray:
    """Gauss-Newton Hessian 2 alpha Re(dc^H dc) of :func:`spectral_penalty`."""
    pc = _penalty_coefficients(protocol, n_pen) if alpha > 0 else None
    if pc is None:
        return np.zeros((protocol.n_params, protocol.n_params))
    dc = pc[1]
    return 2 * alpha * np.real(dc.conj().T @ dc)


def penalty_correction(protocol: ControlProtocol, n_pen: int, steps: int = 20) -> np.ndarray:
    """Parameters moved toward zero above-cutoff content by Levenberg-Marquardt steps.

    Minimizes sum |c_k(u)|^2 over the penalized harmonics.  Near the zero
    set the move is of the size of the residuals, so the rest of the merit
    barely changes.
    """
    u = protocol.params.copy()
    pc = _penalty_coefficients(protocol, n_pen)
    if pc is None:
        return u
    c, dc = pc
    norm = float(np.sum(np.abs(c) ** 2))
    mu = None
    for _ in range(steps):
        if norm == 0.0:
            break
        jac = np.vstack([dc.real, dc.imag])
        res = np.concatenate([c.real, c.imag])
        jtj = jac.T @ jac
        rhs = -jac.T @ res
        scale = max(np.abs(np.diag(jtj)).max(), 1e-300)
        mu = 1e-6 * scale if mu is None else mu
        for _ in range(16):
            du = np.linalg.solve(jtj + mu * np.eye(u.size), rhs)
            trial = _penalty_coefficients(protocol.with_params(u + du), n_pen)
            tnorm = float(np.sum(np.abs(trial[0]) ** 2))
            if tnorm < norm:
                mu = max(mu / 4, 1e-12 * scale)
                break
            mu *= 8
        else:
            break
        u, (c, dc) = u + du, trial
        gain, norm = tnorm / norm, tnorm
        if gain > 0.99:
            break
    return u


def spectral_penalty(protocol: ControlProtocol, alpha: float, n_pen: int):
    """alpha * sum_{k <= n_pen, w_k > w_max} |f0_k|^2 and its gradient in u.

    f0_k are discrete Fourier coefficients of the realized gap control on a
    uniform grid of max(4 n_pen, 256) points; only k > 0 enters the sum.
    """
    if alpha < 0:
        raise InvalidArgument("penalty weight must be non-negative")
    pc = _penalty_coefficients(protocol, n_pen) if alpha > 0 else None
    if pc is None:
        return 0.0, np.zeros(protocol.n_params)
    c, dc = pc
    value = alpha * float(np.sum(np.abs(c) ** 2))
    grad = 2 * alpha * np.real(np.conj(c) @ dc)
    return value, grad
