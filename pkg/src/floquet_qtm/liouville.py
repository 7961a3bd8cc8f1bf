"""Liouville-space superoperators and the restricted GKSL model class.

Density matrices are vectorized row-major: component ``i*d + j`` holds
``rho[i, j]``.  With that convention ``vec(A @ rho @ B) = kron(A, B.T) @ vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument, ModelEvaluationError

HERMITIAN_RTOL = 1e-12

RateFunction = Callable[[np.ndarray], np.ndarray]


def _square(op, name="operator") -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise InvalidArgument(f"{name} must be a square matrix, got shape {op.shape}")
    if op.shape[0] < 2:
        raise InvalidArgument(f"{name} must have dimension >= 2")
    return op


def is_hermitian(op: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    op = np.asarray(op)
    scale = max(np.abs(op).max(initial=0.0), 1.0)
    return bool(np.abs(op - op.conj().T).max(initial=0.0) <= rtol * scale)


def vectorize(rho) -> np.ndarray:
    """Row-major stacking of a d x d operator into a length d**2 vector."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidArgument(f"expected a square matrix, got shape {rho.shape}")
    return rho.reshape(-1).copy()


def devectorize(vec, d: int | None = None) -> np.ndarray:
    vec = np.asarray(vec)
    n = vec.shape[-1]
    if d is None:
        d = int(round(np.sqrt(n)))
    if d * d != n:
        raise InvalidArgument(f"vector length {n} is not a perfect square")
    return vec.reshape(vec.shape[:-1] + (d, d)).copy()


def trace_functional(d: int) -> np.ndarray:
    """Row vector ``t`` with ``t @ vectorize(rho) == trace(rho)``."""
    return np.eye(d, dtype=complex).reshape(-1)


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator for left multiplication, rho -> a @ rho."""
    return np.kron(a, np.eye(a.shape[0]))


def spost(b: np.ndarray) -> np.ndarray:
    """Superoperator for right multiplication, rho -> rho @ b."""
    return np.kron(np.eye(b.shape[0]), b.T)


def hamiltonian_superop(h, check: bool = True) -> np.ndarray:
    """Coherent generator rho -> -i[H, rho]."""
    h = _square(h, "Hamiltonian")
    if check and not is_hermitian(h):
        raise InvalidArgument("Hamiltonian is not Hermitian")
    return -1j * (spre(h) - spost(h))


def dissipator(gamma: float, x) -> np.ndarray:
    """GKSL dissipator rho -> gamma (X rho X^+ - 1/2 {X^+ X, rho})."""
    if gamma < 0:
        raise InvalidArgument(f"rate must be non-negative, got {gamma}")
    x = _square(x, "jump operator")
    xdx = x.conj().T @ x
    return gamma * (np.kron(x, x.conj()) - 0.5 * spre(xdx) - 0.5 * spost(xdx))


def fermi(x):
    """Fermi function 1/(1 + e^x), stable for large |x|."""
    return expit(-np.asarray(x, dtype=float))


def fermi_prime(x):
    fx = fermi(x)
    return -fx * (1.0 - fx)


@dataclass(frozen=True)
class Jump:
    """One dissipative channel gamma * rate(f) * L_D(L).

    ``rate`` maps control values of shape (..., m) to shape (...);
    ``rate_grad`` returns the partial derivatives with shape (..., m).
    """

    gamma: float
    op: np.ndarray
    rate: RateFunction
    rate_grad: RateFunction

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidArgument(f"rate constant must be non-negative, got {self.gamma}")
        object.__setattr__(self, "op", _square(self.op, "jump operator"))


@dataclass(frozen=True)
class BathSpec:
    beta: float
    jumps: tuple[Jump, ...]


@dataclass(frozen=True)
class LindbladModel:
    """H(f) = h0 + sum_k f_k couplings[k]; L_b(f) = sum_i g_bi(f) L_D(gamma_bi, L_bi).

    ``couplings`` has one entry per control function; controls that do not
    act on the Hamiltonian carry a zero matrix.
    """

    h0: np.ndarray
    couplings: tuple[np.ndarray, ...]
    baths: tuple[BathSpec, ...]
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        h0 = _square(self.h0, "h0")
        if not is_hermitian(h0):
            raise InvalidArgument("h0 is not Hermitian")
        couplings = tuple(_square(v, f"V_{k}") for k, v in enumerate(self.couplings))
        for k, v in enumerate(couplings):
            if v.shape != h0.shape:
                raise InvalidArgument(f"V_{k} has shape {v.shape}, expected {h0.shape}")
            if not is_hermitian(v):
                raise InvalidArgument(f"V_{k} is not Hermitian")
        for bath in self.baths:
            for jump in bath.jumps:
                if jump.op.shape != h0.shape:
                    raise InvalidArgument("jump operator dimension mismatch")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "couplings", couplings)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.couplings)

    @cached_property
    def _h0_super(self) -> np.ndarray:
        return hamiltonian_superop(self.h0)

    @cached_property
    def _coupling_supers(self) -> np.ndarray:
        return np.array([hamiltonian_superop(v) for v in self.couplings])

    @cached_property
    def _dissipators(self) -> list[list[np.ndarray]]:
        return [[dissipator(j.gamma, j.op) for j in bath.jumps] for bath in self.baths]

    def hamiltonian(self, f) -> np.ndarray:
        """H(f) for f of shape (..., m); returns (..., d, d)."""
        f = self._controls(f)
        return self.h0 + np.tensordot(f, np.array(self.couplings), axes=(-1, 0))

    def rates(self, f) -> list[list[np.ndarray]]:
        f = self._controls(f)
        out = []
        for b, bath in enumerate(self.baths):
            row = []
            for i, jump in enumerate(bath.jumps):
                g = np.asarray(jump.rate(f), dtype=float)
                if np.any(g < 0) or not np.all(np.isfinite(g)):
                    raise ModelEvaluationError(
                        f"rate modulation g[{b}][{i}] returned a negative or non-finite value")
                row.append(g)
            out.append(row)
        return out

    def bath_superop(self, f, b: int) -> np.ndarray:
        """L_b(f) for f of shape (..., m); returns (..., d^2, d^2)."""
        f = self._controls(f)
        rates = self.rates(f)[b]
        out = np.zeros(f.shape[:-1] + (self.dim ** 2,) * 2, dtype=complex)
        for g, dmat in zip(rates, self._dissipators[b]):
            out += np.asarray(g)[..., None, None] * dmat
        return out

    def bath_superop_df(self, f, b: int) -> np.ndarray:
        """Partials of L_b(f); returns (..., m, d^2, d^2)."""
        f = self._controls(f)
        out = np.zeros(f.shape + (self.dim ** 2,) * 2, dtype=complex)
        for jump, dmat in zip(self.baths[b].jumps, self._dissipators[b]):
            dg = np.asarray(jump.rate_grad(f), dtype=float)
            out += dg[..., None, None] * dmat
        return out

    def _controls(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1:] != (self.n_controls,):
            raise InvalidArgument(
                f"control vector must have {self.n_controls} entries, got shape {f.shape}")
        return f


def assemble_lindbladian(model: LindbladModel, f) -> np.ndarray:
    """Full generator L(f) = -i[H(f), .] + sum_b L_b(f).

    ``f`` may carry leading batch dimensions (e.g. time samples).
    """
    f = model._controls(f)
    out = model._h0_super + np.tensordot(f, model._coupling_supers, axes=(-1, 0))
    out = np.broadcast_to(out, f.shape[:-1] + out.shape[-2:]).astype(complex)
    for b in range(len(model.baths)):
        out = out + model.bath_superop(f, b)
    return out


def dlindbladian_df(model: LindbladModel, f, k: int | None = None) -> np.ndarray:
    """Exact partial derivative dL/df_k = -i[V_k, .] + sum_bi dg_bi/df_k L_D(gamma_bi, L_bi).

    With ``k=None`` all partials are returned stacked on axis -3.
    """
    f = model._controls(f)
    out = np.broadcast_to(model._coupling_supers,
                          f.shape + model._coupling_supers.shape[-2:]).astype(complex)
    for b in range(len(model.baths)):
        out = out + model.bath_superop_df(f, b)
    if k is None:
        return out
    if not 0 <= k < model.n_controls:
        raise InvalidArgument(f"control index {k} out of range")
    return out[..., k, :, :]


SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
# basis ordering (|e>, |g>)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


def _tls_rate(delta, beta, bath_index, sign):
    def rate(f):
        f = np.asarray(f, dtype=float)
        return f[..., bath_index] * fermi(sign * beta * (delta + f[..., 0]))

    def rate_grad(f):
        f = np.asarray(f, dtype=float)
        x = sign * beta * (delta + f[..., 0])
        out = np.zeros_like(f)
        out[..., 0] = f[..., bath_index] * sign * beta * fermi_prime(x)
        out[..., bath_index] = fermi(x)
        return out

    return rate, rate_grad


def tls_preset(delta: float = 1.0, gamma: float = 1.0, beta_hot: float = 1.0,
               beta_cold: float = 2.0) -> LindbladModel:
    """Two-level engine with controlled gap: H = (delta + f0) sigma_z / 2.

    Controls are (f0, f1, f2): gap shift, hot-bath switch, cold-bath switch.
    Excitation (sigma_+) rates carry F(+beta*eps) so that each bath alone
    relaxes the system to excited population F(beta*eps).
    """
    if delta <= 0 or gamma <= 0:
        raise InvalidArgument("delta and gamma must be positive")
    if beta_hot >= beta_cold:
        raise InvalidArgument("beta_hot must be smaller than beta_cold (bath 1 is the hot bath)")
    baths = []
    for b, beta in ((1, beta_hot), (2, beta_cold)):
        jumps = []
        for op, sign in ((SIGMA_PLUS, +1), (SIGMA_MINUS, -1)):
            rate, rate_grad = _tls_rate(delta, beta, b, sign)
            jumps.append(Jump(gamma, op, rate, rate_grad))
        baths.append(BathSpec(beta, tuple(jumps)))
    zero = np.zeros((2, 2), dtype=complex)
    return LindbladModel(
        h0=0.5 * delta * SIGMA_Z,
        couplings=(0.5 * SIGMA_Z, zero, zero),
        baths=tuple(baths),
        name="tls",
        params=dict(delta=delta, gamma=gamma, beta_hot=beta_hot, beta_cold=beta_cold),
    )
