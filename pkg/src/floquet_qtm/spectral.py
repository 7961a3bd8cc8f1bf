"""Fourier-domain (Floquet) treatment of periodic GKSL equations.

Coefficient arrays have shape (d^2, N) with column ``i`` holding harmonic
``p = i - (N - 1)/2``.  Stacked vectors acting with the Floquet matrix are
harmonic-major: index ``i * d^2 + alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .controls import ControlProtocol
from .errors import DegenerateNESS, IllConditionedSolve, InvalidArgument
from .liouville import LindbladModel, assemble_lindbladian, dlindbladian_df, trace_functional
from .quadrature import CycleQuadrature, cycle_quadrature

KERNEL_TOL = 1e-8
KERNEL_GAP = 1e3
RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class HarmonicGrid:
    n_harmonics: int
    period: float
    sample_factor: int = 4

    def __post_init__(self):
        if self.n_harmonics < 1 or self.n_harmonics % 2 == 0:
            raise InvalidArgument(f"n_harmonics must be odd and positive, got {self.n_harmonics}")
        if self.period <= 0:
            raise InvalidArgument("period must be positive")
        if self.sample_factor < 4:
            raise InvalidArgument("sample_factor must be >= 4")

    @property
    def cutoff(self) -> int:
        return (self.n_harmonics - 1) // 2

    @property
    def harmonics(self) -> np.ndarray:
        return np.arange(-self.cutoff, self.cutoff + 1)

    @property
    def omegas(self) -> np.ndarray:
        return 2 * np.pi / self.period * self.harmonics

    @property
    def band(self) -> np.ndarray:
        """Harmonic differences q - p needed by the Floquet matrix."""
        n = self.n_harmonics
        return np.arange(-(n - 1), n)

    @property
    def n_samples(self) -> int:
        return self.sample_factor * self.n_harmonics

    @property
    def quadrature_density(self) -> int:
        """Gauss nodes per period used for cycle integrals."""
        return max(2 * self.n_samples, 512)

    def times(self, n: int | None = None) -> np.ndarray:
        n = self.n_samples if n is None else n
        return self.period * np.arange(n) / n

    def refined(self, n_harmonics: int) -> "HarmonicGrid":
        return HarmonicGrid(n_harmonics, self.period, self.sample_factor)


def stack(coeffs: np.ndarray) -> np.ndarray:
    """(..., d^2, N) -> (..., N * d^2), harmonic-major."""
    coeffs = np.asarray(coeffs)
    return np.swapaxes(coeffs, -1, -2).reshape(coeffs.shape[:-2] + (-1,))


def unstack(vec: np.ndarray, d2: int) -> np.ndarray:
    vec = np.asarray(vec)
    n = vec.shape[-1] // d2
    return np.swapaxes(vec.reshape(vec.shape[:-1] + (n, d2)), -1, -2)


def coefficients_from_samples(samples: np.ndarray, grid: HarmonicGrid) -> np.ndarray:
    """Harmonics |p| <= K of uniformly sampled (n_t, d, d) data, as (d^2, N)."""
    n = samples.shape[0]
    flat = samples.reshape(n, -1)
    c = np.fft.fft(flat, axis=0) / n
    idx = np.mod(grid.harmonics, n)
    return c[idx].T


def grid_quadrature(protocol: ControlProtocol, grid: HarmonicGrid) -> CycleQuadrature:
    """Cycle quadrature resolving every harmonic of the Floquet band."""
    return cycle_quadrature(protocol, grid.quadrature_density)


def lindbladian_harmonics(model: LindbladModel, protocol: ControlProtocol,
                          grid: HarmonicGrid, quad: CycleQuadrature | None = None) -> np.ndarray:
    """Fourier coefficients L_q of L(f(u, t)) for q = -(N-1) .. N-1.

    Shape (2N - 1, d^2, d^2).  The integrals over the cycle use the composite
    Gauss rule whose panels break at the switches and the clamp knots, so
    the coefficients are accurate to rounding even though L(t) jumps.
    """
    quad = grid_quadrature(protocol, grid) if quad is None else quad
    samples = assemble_lindbladian(model, protocol.quadrature_controls(quad))
    return quad.coefficients(samples, grid.band)


def lindbladian_param_harmonics(model: LindbladModel, protocol: ControlProtocol,
                                grid: HarmonicGrid,
                                quad: CycleQuadrature | None = None) -> np.ndarray:
    """Harmonics of dL/du_r, shape (R, 2N - 1, d^2, d^2).

    Only the gap control depends on u, so dL/du_r = dL/df0 * df0/du_r.
    """
    return ParamDerivative(model, protocol, grid, quad).harmonics()


class ParamDerivative:
    """The derivative of the Floquet matrix with respect to u, as an operator.

    Applied to band-limited coefficients x, the product sum_p dL_{q-p} x_p
    for |q| <= K equals the Fourier coefficient of dL/du(t) x(t), which is
    evaluated on the cycle quadrature without forming the harmonic band.
    """

    def __init__(self, model: LindbladModel, protocol: ControlProtocol, grid: HarmonicGrid,
                 quad: CycleQuadrature | None = None):
        self.grid = grid
        self.quad = grid_quadrature(protocol, grid) if quad is None else quad
        self.dldf0 = dlindbladian_df(model, protocol.quadrature_controls(self.quad), 0)
        self.jac = protocol.gap_jacobian(self.quad.t)

    def harmonics(self) -> np.ndarray:
        phases = self.quad.phases(self.grid.band)
        return np.einsum("qt,tr,tab->rqab", phases, self.jac, self.dldf0, optimize=True)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """(d^2, N) -> (R, d^2, N)."""
        x = np.exp(1j * np.multiply.outer(self.quad.t, self.grid.omegas)) @ coeffs.T
        y = np.einsum("tab,tb->ta", self.dldf0, x)
        phases = self.quad.phases(self.grid.harmonics)
        w = (self.jac[:, :, None] * y[:, None, :]).reshape(y.shape[0], -1)
        out = (phases @ w).reshape(phases.shape[0], self.jac.shape[1], y.shape[1])
        return out.transpose(1, 2, 0)


def _param_action(dfm_dur, coeffs: np.ndarray, d2: int) -> np.ndarray:
    if isinstance(dfm_dur, ParamDerivative):
        return dfm_dur.apply(coeffs)
    dfm_dur = np.asarray(dfm_dur)
    if dfm_dur.ndim == 3:
        return unstack(np.einsum("rij,j->ri", dfm_dur, stack(coeffs)), d2)
    return floquet_action(dfm_dur, coeffs)


@dataclass(frozen=True)
class FloquetMatrix:
    """Dense (d^2 N) x (d^2 N) matrix with blocks L_{q-p} - i w_p delta_qp."""

    matrix: np.ndarray
    grid: HarmonicGrid
    dim: int

    @cached_property
    def svd(self):
        return np.linalg.svd(self.matrix)

    @property
    def singular_values(self) -> np.ndarray:
        return self.svd[1]

    def norm(self) -> float:
        return float(self.singular_values[0])


def build_floquet_matrix(harmonics: np.ndarray, grid: HarmonicGrid,
                         include_frequency: bool = True) -> FloquetMatrix:
    """Assemble the block-Toeplitz Floquet matrix from the band of harmonics.

    With ``include_frequency=False`` the -i w_p diagonal is omitted, which is
    what the derivative of the Floquet matrix with respect to a control
    parameter looks like.
    """
    n = grid.n_harmonics
    if harmonics.shape[0] != 2 * n - 1:
        raise InvalidArgument(f"need {2 * n - 1} harmonics, got {harmonics.shape[0]}")
    d2 = harmonics.shape[-1]
    idx = np.subtract.outer(np.arange(n), np.arange(n)) + (n - 1)
    blocks = harmonics[idx]  # (q, p, a, b)
    mat = blocks.transpose(0, 2, 1, 3).reshape(n * d2, n * d2)
    if include_frequency:
        mat = mat - 1j * np.diag(np.repeat(grid.omegas, d2))
    return FloquetMatrix(mat, grid, int(round(np.sqrt(d2))))


def floquet_action(harmonics: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Apply the frequency-free Floquet matrix of ``harmonics`` to ``coeffs``.

    harmonics: (..., 2N - 1, d^2, d^2); coeffs: (d^2, N).  Returns (..., d^2, N)
    computed as a band-limited convolution via FFT.
    """
    n = coeffs.shape[-1]
    length = 1 << int(np.ceil(np.log2(3 * n - 2)))
    fa = np.fft.fft(harmonics, n=length, axis=-3)
    fb = np.fft.fft(coeffs.T, n=length, axis=0)
    prod = np.einsum("...fab,fb->...fa", fa, fb)
    conv = np.fft.ifft(prod, axis=-2)[..., n - 1:2 * n - 1, :]
    return np.swapaxes(conv, -1, -2)


@dataclass(frozen=True)
class SpectralSeries:
    coeffs: np.ndarray
    grid: HarmonicGrid
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def d2(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.d2)))

    def harmonic(self, p: int) -> np.ndarray:
        return self.coeffs[:, p + self.grid.cutoff].reshape(self.dim, self.dim)

    def harmonic_traces(self) -> np.ndarray:
        return trace_functional(self.dim) @ self.coeffs

    def hermiticity_error(self) -> float:
        mats = self.coeffs.T.reshape(-1, self.dim, self.dim)
        return float(np.abs(mats[::-1] - np.conj(np.swapaxes(mats, -1, -2))).max())

    def __call__(self, t) -> np.ndarray:
        return synthesize(self, t)


class SpectralState(SpectralSeries):
    """Fourier coefficients of the periodic steady state."""


class SpectralAuxiliary(SpectralSeries):
    """Fourier coefficients of the traceless fluctuation operator s(t)."""


def synthesize(series, t) -> np.ndarray:
    """rho(t) = sum_p rho_p exp(i w_p t) as an array (n_t, d, d)."""
    coeffs = series.coeffs if isinstance(series, SpectralSeries) else series[0]
    grid = series.grid if isinstance(series, SpectralSeries) else series[1]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    phase = np.exp(1j * np.multiply.outer(t, grid.omegas))
    d = int(round(np.sqrt(coeffs.shape[-2])))
    vals = np.swapaxes(coeffs @ phase.T, -1, -2)  # (..., n_t, d^2)
    return vals.reshape(coeffs.shape[:-2] + (t.size, d, d))


def _check_kernel(sv: np.ndarray):
    smallest, second, largest = sv[-1], sv[-2], sv[0]
    if smallest > KERNEL_TOL * largest or second < KERNEL_GAP * smallest:
        raise DegenerateNESS(
            f"Floquet kernel is not one-dimensional: smallest singular values "
            f"{smallest:.3e}, {second:.3e} (norm {largest:.3e})",
            singular_values=(smallest, second))


def solve_ness(fm: FloquetMatrix) -> SpectralState:
    """Kernel of the Floquet matrix, normalized to unit trace of the zero harmonic."""
    _, sv, vh = fm.svd
    if len(sv) > 1:
        _check_kernel(sv)
    kernel = vh[-1].conj()
    coeffs = unstack(kernel, fm.dim ** 2)
    tr0 = trace_functional(fm.dim) @ coeffs[:, fm.grid.cutoff]
    coeffs = coeffs / tr0
    gap = sv[-2] / sv[-1] if len(sv) > 1 and sv[-1] > 0 else np.inf
    diagnostics = dict(smallest_singular_value=float(sv[-1]),
                       second_singular_value=float(sv[-2]) if len(sv) > 1 else np.nan,
                       kernel_gap=float(gap), norm=float(sv[0]),
                       kernel_residual=float(np.linalg.norm(fm.matrix @ stack(coeffs))
                                             / (sv[0] * np.linalg.norm(coeffs))))
    return SpectralState(coeffs, fm.grid, diagnostics)


def solve_deflated(fm: FloquetMatrix, rhs: np.ndarray, kernel: np.ndarray,
                   method: str = "svd") -> np.ndarray:
    """Least-squares solution of fm x = rhs with x orthogonal to ``kernel``.

    rhs: (D,) or (D, R) stacked vectors.  ``method='qr'`` appends the
    normalized kernel row to the system and solves it through one QR
    factorization; ``method='svd'`` reuses the singular value decomposition
    with the kernel direction dropped.  Both give the same x.
    """
    rhs = np.asarray(rhs, dtype=complex)
    single = rhs.ndim == 1
    b = rhs[:, None] if single else rhs
    if method == "svd":
        u, sv, vh = fm.svd
        x = vh[:-1].conj().T @ ((u[:, :-1].conj().T @ b) / sv[:-1, None])
    elif method == "qr":
        row = kernel.conj() / np.linalg.norm(kernel)
        aug = np.vstack([fm.matrix, row[None, :]])
        baug = np.vstack([b, np.zeros((1, b.shape[1]))])
        q, r = sla.qr(aug, mode="economic")
        x = sla.solve_triangular(r, q.conj().T @ baug)
    else:
        raise InvalidArgument(f"unknown solve method {method!r}")
    resid = np.linalg.norm(fm.matrix @ x - b, axis=0)
    scale = np.linalg.norm(b, axis=0)
    bad = resid > RESIDUAL_TOL * np.maximum(scale, 1e-300)
    bad &= scale > 0
    if np.any(bad):
        worst = float(np.max(resid[bad] / scale[bad]))
        raise IllConditionedSolve(f"deflated solve residual {worst:.3e} exceeds {RESIDUAL_TOL:g}")
    return x[:, 0] if single else x


def _trace_correct(x_coeffs: np.ndarray, ness: SpectralState) -> np.ndarray:
    tr = trace_functional(ness.dim)
    tr0 = np.einsum("a,...a->...", tr, x_coeffs[..., :, ness.grid.cutoff])
    return x_coeffs - tr0[..., None, None] * ness.coeffs


def _solve_corrected(fm, rhs_coeffs, ness, method):
    d2 = ness.d2
    rhs = stack(rhs_coeffs)
    if rhs.ndim == 2:
        rhs = rhs.T
    x = solve_deflated(fm, rhs, stack(ness.coeffs), method=method)
    x_coeffs = unstack(x.T if x.ndim == 2 else x, d2)
    return _trace_correct(x_coeffs, ness)


def solve_ness_gradient(fm: FloquetMatrix, dfm_dur, ness: SpectralState,
                        method: str = "svd") -> np.ndarray:
    """d rho_p / d u_r for all r, shape (R, d^2, N).

    ``dfm_dur`` is the derivative of the Floquet matrix: a
    :class:`ParamDerivative`, its harmonic band (R, 2N - 1, d^2, d^2), or
    dense matrices (R, D, D).
    """
    rhs = -_param_action(dfm_dur, ness.coeffs, ness.d2)
    return _solve_corrected(fm, rhs, ness, method)


def _gap_coupling(model: LindbladModel) -> np.ndarray:
    return model.couplings[0]


def build_fluctuation_rhs(ness: SpectralState, model: LindbladModel,
                          protocol: ControlProtocol,
                          quad: CycleQuadrature | None = None) -> np.ndarray:
    """Harmonics h of the fluctuation source, signed so that fm @ s = h.

    The time-domain source is {rho, dH/dt} - 2 Tr[rho dH/dt] rho with
    dH/dt = f0_dot V0; since s_dot = L s + source, its Fourier transform
    enters the Floquet system with a minus sign.
    """
    grid = ness.grid
    quad = grid_quadrature(protocol, grid) if quad is None else quad
    rho = synthesize(ness, quad.t)
    hdot = protocol.gap_dot(quad.t)[:, None, None] * _gap_coupling(model)
    source = _fluctuation_source(rho, hdot).reshape(quad.size, -1)
    return -quad.coefficients(source, grid.harmonics).T


def _fluctuation_source(rho, hdot):
    tr = np.einsum("...ij,...ji->...", rho, hdot)
    return rho @ hdot + hdot @ rho - 2 * tr[..., None, None] * rho


def fluctuation_rhs_gradient(ness: SpectralState, ness_grad: np.ndarray, model: LindbladModel,
                             protocol: ControlProtocol,
                             quad: CycleQuadrature | None = None) -> np.ndarray:
    """d h / d u_r, shape (R, d^2, N)."""
    grid = ness.grid
    quad = grid_quadrature(protocol, grid) if quad is None else quad
    t = quad.t
    v0 = _gap_coupling(model)
    rho = synthesize(ness, t)
    drho = synthesize((ness_grad, grid), t)
    hdot = protocol.gap_dot(t)[:, None, None] * v0
    dhdot = np.moveaxis(protocol.gap_dot_jacobian(t), 1, 0)[:, :, None, None] * v0
    tr = np.einsum("tij,tji->t", rho, hdot)
    dtr = (np.einsum("rtij,tji->rt", drho, hdot) + np.einsum("tij,rtji->rt", rho, dhdot))
    dsrc = (drho @ hdot + hdot @ drho + rho @ dhdot + dhdot @ rho
            - 2 * dtr[..., None, None] * rho - 2 * tr[:, None, None] * drho)
    dsrc = dsrc.reshape(dsrc.shape[0], quad.size, -1)
    return -np.einsum("qt,rta->raq", quad.phases(grid.harmonics), dsrc)


def solve_fluctuation(fm: FloquetMatrix, h: np.ndarray, ness: SpectralState,
                      method: str = "svd") -> SpectralAuxiliary:
    """Periodic solution s of fm s = h with Tr s_0 = 0."""
    coeffs = _solve_corrected(fm, h, ness, method)
    return SpectralAuxiliary(coeffs, ness.grid)


def solve_fluctuation_gradient(fm: FloquetMatrix, dfm_dur, aux: SpectralAuxiliary,
                               dh_dur: np.ndarray, ness: SpectralState,
                               method: str = "svd") -> np.ndarray:
    """d s_p / d u_r, shape (R, d^2, N): fm ds = -dfm s + dh, Tr ds_0 = 0."""
    action = _param_action(dfm_dur, aux.coeffs, ness.d2)
    return _solve_corrected(fm, -action + dh_dur, ness, method)
