"""Projected limited-memory quasi-Newton ascent with multistart.

Maximizes G(u) over a box (or an l1 ball for the unclamped flavor).  The
search direction comes from the L-BFGS two-loop recursion applied to the
free variables; steps follow the projected path x(a) = P(x + a d) with a
backtracking line search on the sufficient-increase condition.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FloquetQTMError, InvalidArgument, OptimizationFailed

log = logging.getLogger(__name__)

ARMIJO = 1e-4
BACKTRACK = 0.5
MEMORY = 10
MAX_REJECTIONS = 20
MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class OptimizerSettings:
    """Settings of the local ascent and of the multistart driver.

    ``bounds`` is an (R, 2) array of [lo, hi] rows.  ``l1_radius`` switches
    the feasible set to the ball sum |u| <= l1_radius intersected with the box.
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 1e-10
    bounds: np.ndarray | None = None
    multistarts: int = 1
    seed: int = 0
    l1_radius: float | None = None

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise InvalidArgument("tolerances must be positive")
        if self.max_iterations < 0:
            raise InvalidArgument("max_iterations must be non-negative")
        if self.multistarts < 1:
            raise InvalidArgument("multistarts must be >= 1")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 0] > b[:, 1]):
                raise InvalidArgument("bounds must be an (R, 2) array with lo <= hi")
            object.__setattr__(self, "bounds", b)
        if self.l1_radius is not None and self.l1_radius <= 0:
            raise InvalidArgument("l1_radius must be positive")


def symmetric_bounds(n: int, radius: float) -> np.ndarray:
    return np.tile([-radius, radius], (n, 1)).astype(float)


def project_l1(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : sum |x| <= radius} (sort-based)."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    mu = np.sort(a)[::-1]
    cs = np.cumsum(mu)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(mu * k > cs - radius)[0][-1]
    theta = (cs[rho] - radius) / (rho + 1)
    return np.sign(v) * np.maximum(a - theta, 0.0)


class FeasibleSet:
    """Box, optionally intersected with an l1 ball."""

    def __init__(self, n: int, bounds=None, l1_radius=None):
        self.n = n
        self.bounds = symmetric_bounds(n, np.inf) if bounds is None else np.asarray(bounds, float)
        if self.bounds.shape != (n, 2):
            raise InvalidArgument(f"bounds have shape {self.bounds.shape}, expected {(n, 2)}")
        self.l1_radius = l1_radius

    def project(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds.T
        y = np.clip(x, lo, hi)
        if self.l1_radius is None:
            return y
        # alternating projections; the box is symmetric in practice, where one pass suffices
        for _ in range(50):
            z = np.clip(project_l1(y, self.l1_radius), lo, hi)
            if np.max(np.abs(z - y)) <= 1e-15 * max(1.0, np.max(np.abs(y))):
                return z
            y = z
        return y

    def active(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Variables pinned at a bound with the gradient pushing outward."""
        lo, hi = self.bounds.T
        return ((x <= lo) & (g < 0)) | ((x >= hi) & (g > 0))

    def contains(self, x: np.ndarray) -> bool:
        lo, hi = self.bounds.T
        ok = bool(np.all(x >= lo) and np.all(x <= hi))
        if self.l1_radius is not None:
            ok &= bool(np.abs(x).sum() <= self.l1_radius * (1 + 1e-12))
        return ok


@dataclass
class IterationRecord:
    u: np.ndarray
    merit: float
    grad_norm: float
    step: float


@dataclass
class OptimizationTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    termination: str = ""
    best_u: np.ndarray | None = None
    best_merit: float = -np.inf
    n_evaluations: int = 0
    start_index: int = 0
    error: str | None = None

    @property
    def merits(self) -> np.ndarray:
        return np.array([r.merit for r in self.iterations])

    def to_dict(self) -> dict:
        return dict(termination=self.termination, best_merit=self.best_merit,
                    best_u=None if self.best_u is None else self.best_u.tolist(),
                    n_iterations=len(self.iterations), n_evaluations=self.n_evaluations,
                    start_index=self.start_index, error=self.error,
                    merits=self.merits.tolist(),
                    grad_norms=[r.grad_norm for r in self.iterations],
                    steps=[r.step for r in self.iterations])


def _initial_scale(pairs, known):
    """Curvature lam of the unknown part of -G, from the newest secant pair."""
    s, y, _ = pairs[-1]
    r = y if known is None else y - known @ s
    sr = s @ r
    if sr > 0:
        return (r @ r) / sr
    return np.linalg.norm(r) / max(np.linalg.norm(s), 1e-300)


def _two_loop(g, pairs, known=None):
    """L-BFGS inverse-Hessian product for the minimization of -G, applied to g.

    The initial matrix is (lam I + known)^-1, where ``known`` is a positive
    semidefinite curvature the caller can supply analytically (identity
    scaling when None).
    """
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        lam = _initial_scale(pairs, known)
        if known is None:
            q /= lam
        else:
            lam = max(lam, 1e-12 * max(np.abs(known).max(), 1e-300))
            q = np.linalg.solve(known + lam * np.eye(q.size), q)
    elif known is not None and np.any(known):
        q = np.linalg.solve(known + np.eye(q.size) * 1e-3 * np.abs(known).max(), q)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _finite(value, grad) -> bool:
    return np.isfinite(value) and grad is not None and bool(np.all(np.isfinite(grad)))


def maximize(objective: Callable, u0, settings: OptimizerSettings,
             curvature: Callable | None = None,
             correction: Callable | None = None) -> OptimizationTrace:
    """Local projected quasi-Newton ascent of ``objective(u) -> (G, grad)``.

    ``curvature(u)``, if given, returns a known positive semidefinite part of
    the Hessian of -G (for instance the Gauss-Newton matrix of a quadratic
    penalty); it seeds the limited-memory approximation.

    ``correction(u)``, if given, proposes a second-order correction after
    every accepted step (for instance a Gauss-Newton step back onto the
    zero set of a stiff penalty).  The corrected point replaces the step
    only if it is feasible after projection and does not decrease G.

    Stops when the projected-gradient max-norm drops below
    ``gradient_tolerance``, an accepted step is shorter than
    ``step_tolerance`` (max-norm), or after ``max_iterations``.  Evaluation
    errors abort with the trace so far; non-finite values count as
    rejected trial steps.
    """
    u0 = np.asarray(u0, dtype=float)
    feas = FeasibleSet(u0.size, settings.bounds, settings.l1_radius)
    trace = OptimizationTrace()

    def evaluate(x):
        trace.n_evaluations += 1
        g, dg = objective(x)
        return float(g), None if dg is None else np.asarray(dg, dtype=float)

    x = feas.project(u0)
    try:
        val, grad = evaluate(x)
    except FloquetQTMError as exc:
        trace.termination = "evaluation_failed"
        trace.error = str(exc)
        return trace
    if not _finite(val, grad):
        trace.termination = "nonfinite_start"
        trace.error = "objective is not finite at the initial point"
        return trace
    if correction is not None:
        xc = feas.project(np.asarray(correction(x), dtype=float))
        if np.max(np.abs(xc - x)) > settings.step_tolerance:
            try:
                vc, gc = evaluate(xc)
            except FloquetQTMError:
                vc, gc = -np.inf, None
            if _finite(vc, gc) and vc >= val:
                x, val, grad = xc, vc, gc

    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    rejections = 0
    step_norm = 0.0
    trace.best_u, trace.best_merit = x.copy(), val

    retry = False
    for it in range(settings.max_iterations + 1):
        pgrad = feas.project(x + grad) - x
        pg_norm = float(np.max(np.abs(pgrad)))
        if not retry:
            trace.iterations.append(IterationRecord(x.copy(), val, pg_norm, step_norm))
        retry = False
        if pg_norm <= settings.gradient_tolerance:
            trace.termination = "gradient_tolerance"
            break
        if it == settings.max_iterations:
            trace.termination = "max_iterations"
            break

        active = feas.active(x, grad)
        gfree = np.where(active, 0.0, grad)
        known = None if curvature is None else np.asarray(curvature(x), dtype=float)
        d = _two_loop(gfree, pairs, known)
        d[active] = 0.0
        if not pairs:
            # first step: move at most the smaller of unit length and the box size
            span = np.min(np.diff(feas.bounds, axis=1)) if np.all(
                np.isfinite(feas.bounds)) else 1.0
            d *= min(1.0, 0.25 * span) / max(np.max(np.abs(d)), 1e-300)
        if gfree @ d <= 0:
            pairs.clear()
            d = gfree.copy()

        alpha = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            xt = feas.project(x + alpha * d)
            dx = xt - x
            if np.max(np.abs(dx)) <= settings.step_tolerance:
                break
            try:
                vt, gt = evaluate(xt)
            except FloquetQTMError as exc:
                trace.termination = "evaluation_failed"
                trace.error = str(exc)
                return trace
            if not _finite(vt, gt):
                rejections += 1
                if rejections >= MAX_REJECTIONS:
                    trace.termination = "nonfinite_objective"
                    trace.error = f"{MAX_REJECTIONS} consecutive non-finite evaluations"
                    return trace
                alpha *= BACKTRACK
                continue
            rejections = 0
            if vt >= val + ARMIJO * (grad @ dx):
                accepted = True
                break
            alpha *= BACKTRACK
        if accepted and correction is not None:
            xc = feas.project(np.asarray(correction(xt), dtype=float))
            if np.max(np.abs(xc - xt)) > settings.step_tolerance:
                try:
                    vc, gc = evaluate(xc)
                except FloquetQTMError:
                    vc, gc = -np.inf, None
                if _finite(vc, gc) and vc >= vt:
                    xt, vt, gt = xc, vc, gc
        if not accepted:
            if pairs:
                # retry from steepest ascent before giving up
                pairs.clear()
                retry = True
                continue
            trace.termination = "step_tolerance"
            break

        s = xt - x
        y = grad - gt  # curvature of -G
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > MEMORY:
                pairs.pop(0)
        step_norm = float(np.max(np.abs(s)))
        x, val, grad = xt, vt, gt
        if val > trace.best_merit:
            trace.best_u, trace.best_merit = x.copy(), val
        if step_norm <= settings.step_tolerance:
            pgrad = feas.project(x + grad) - x
            trace.iterations.append(IterationRecord(x.copy(), val, float(np.max(np.abs(pgrad))),
                                                    step_norm))
            trace.termination = "step_tolerance"
            break
    return trace


def initial_points(n_modes: int, delta: float, count: int, seed: int) -> np.ndarray:
    """u = 0 followed by seeded random draws; prefixes agree for equal seeds."""
    rng = np.random.default_rng(seed)
    n = np.arange(1, n_modes + 1)
    half = np.repeat(delta / (2 * n), 2)
    out = np.zeros((count, 2 * n_modes + 1))
    for k in range(1, count):
        out[k, 0] = rng.uniform(-0.75 * delta, 0.75 * delta)
        out[k, 1:] = rng.uniform(-half, half)
    return out


def _run_start(args):
    objective, u0, settings, k, curvature, correction = args
    trace = maximize(objective, u0, settings, curvature, correction)
    trace.start_index = k
    return trace


def multistart(objective: Callable, settings: OptimizerSettings, n_modes: int, delta: float,
               jobs: int = 1, starts: np.ndarray | None = None,
               curvature: Callable | None = None, correction: Callable | None = None):
    """Run :func:`maximize` from every initial point; return (best, all traces).

    The objective must be picklable when ``jobs > 1``.
    """
    if starts is None:
        starts = initial_points(n_modes, delta, settings.multistarts, settings.seed)
    tasks = [(objective, u0, settings, k, curvature, correction)
             for k, u0 in enumerate(starts)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_run_start, tasks))
    else:
        traces = [_run_start(t) for t in tasks]
    ok = [t for t in traces if t.best_u is not None and np.isfinite(t.best_merit)]
    if not ok:
        reasons = "; ".join(f"start {t.start_index}: {t.termination} {t.error or ''}".strip()
                            for t in traces)
        raise OptimizationFailed(f"all {len(traces)} starts failed ({reasons})")
    for t in traces:
        log.debug("start %d: G=%.6e after %d iterations (%s)", t.start_index, t.best_merit,
                  len(t.iterations), t.termination)
    best = max(ok, key=lambda t: (t.best_merit, -t.start_index))
    return best, traces
