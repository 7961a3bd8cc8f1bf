"""Command-line driver: single runs, sweeps, NESS dumps and the validation battery.

Exit codes: 0 success, 2 config error, 3 solver error, 4 validation failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cf
from . import oracle
from . import spectral as sp
from .errors import ConfigError, FloquetQTMError, InvalidArgument
from .optimizer import multistart

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4

SUMMARY_COLUMNS = ("sweep_value", "P_opt", "P_constant_gap", "P_opt/P_c_max", "J1", "J2",
                   "first_law_residual", "G", "penalty", "penalty_over_P", "max_abs_f0",
                   "efficiency", "refinement_change", "status")

PROTOCOL_SAMPLES = 1024


def _float(x):
    return None if x is None else float(x)


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _physical(cfg: dict) -> dict:
    m = cfg["model"]
    return dict(gamma=m["gamma"] * m["delta"], beta_hot=m["beta_hot"] / m["delta"],
                beta_cold=m["beta_cold"] / m["delta"], delta=m["amplitude_bound"] * m["delta"],
                gap=m["delta"])


def baselines(cfg: dict) -> tuple[float, float]:
    """(constant-gap power at the configured period, its T -> 0 maximum)."""
    phys = _physical(cfg)
    best = oracle.otto_max(**phys)
    base = oracle.otto_power(cf.period_of(cfg), best.eps1, best.eps2, phys["gamma"],
                             phys["beta_hot"], phys["beta_cold"])
    return float(base), best.power


def protocol_dump(protocol) -> dict:
    s = np.arange(PROTOCOL_SAMPLES) / PROTOCOL_SAMPLES
    return dict(u=protocol.params.tolist(), period=protocol.period, flavor=protocol.flavor,
                t_over_T=s.tolist(), f0=protocol.gap(s * protocol.period).tolist())


def ledger_dict(ev) -> dict:
    led = ev.ledger
    return dict(G=ev.merit, P=led.power, J1=float(led.heat_currents[0]),
                J2=float(led.heat_currents[1]), delta_P=_float(led.delta_power),
                penalty=ev.penalty, efficiency=float(led.efficiency) if led.heat_currents[0]
                else None)


# -- run ------------------------------------------------------------------------

def run_single(cfg: dict, jobs: int = 1) -> tuple[dict, dict]:
    """Optimize one configuration; return (record, protocol dump)."""
    start = time.perf_counter()
    problem = cf.build_problem(cfg)
    settings = cf.build_settings(cfg)
    best, traces = multistart(problem.objective, settings, problem.protocol.n_modes,
                              problem.protocol.delta, jobs=jobs, curvature=problem.curvature,
                              correction=problem.correction)
    ev = problem.evaluate(best.best_u, gradient=False)
    n_final = cfg["spectral"]["final_n_harmonics"]
    refinement = None
    if n_final > problem.grid.n_harmonics:
        fine = problem.with_grid(n_final).evaluate(best.best_u, gradient=False)
        refinement = abs(fine.ledger.power - ev.ledger.power)
    base, pmax = baselines(cfg)
    f0 = ev.protocol.gap(np.linspace(0, ev.protocol.period, 8 * PROTOCOL_SAMPLES,
                                     endpoint=False))
    diag = {k: (float(v) if isinstance(v, (float, np.floating)) else v)
            for k, v in ev.diagnostics.items()}
    diag.update(refinement_n_harmonics=n_final, refinement_change=refinement,
                max_abs_f0=float(np.abs(f0).max()))
    record = dict(version=__version__, config=cfg, u=best.best_u.tolist(), **ledger_dict(ev),
                  P_constant_gap=base, P_c_max=pmax, wall_time=time.perf_counter() - start,
                  diagnostics=diag,
                  optimizer=dict(best_start=best.start_index, termination=best.termination,
                                 starts=[dict(index=t.start_index, merit=t.best_merit,
                                              iterations=len(t.iterations),
                                              termination=t.termination, error=t.error)
                                         for t in traces]))
    return record, protocol_dump(ev.protocol)


def _write_run(out: Path, record: dict, protocol: dict) -> None:
    _dump(out / "record.json", record)
    _dump(out / "protocol.json", protocol)


def _sweep_point(args):
    k, value, cfg = args
    try:
        record, protocol = run_single(cfg)
        return k, value, record, protocol, None
    except FloquetQTMError as exc:
        return k, value, None, None, f"{type(exc).__name__}: {exc}"


def _summary_row(value, record, error) -> dict:
    if record is None:
        return dict(sweep_value=value, status=f"failed: {error}")
    d = record["diagnostics"]
    p = record["P"]
    return {"sweep_value": value, "P_opt": p, "P_constant_gap": record["P_constant_gap"],
            "P_opt/P_c_max": p / record["P_c_max"], "J1": record["J1"], "J2": record["J2"],
            "first_law_residual": d["first_law_residual"], "G": record["G"],
            "penalty": record["penalty"], "penalty_over_P": record["penalty"] / p if p else None,
            "max_abs_f0": d["max_abs_f0"], "efficiency": record["efficiency"],
            "refinement_change": d["refinement_change"], "status": "ok"}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def run_sweep(cfg: dict, out: Path, jobs: int = 1) -> list:
    """One optimization per sweep value; writes summary.csv and per-point records."""
    if "sweep" not in cfg:
        raise ConfigError("sweep: block required for the sweep subcommand")
    values = cfg["sweep"]["values"]
    tasks = [(k, v, cf.with_sweep_value(cfg, v)) for k, v in enumerate(values)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = []
    for k, value, record, protocol, error in sorted(results, key=lambda r: r[0]):
        if record is not None:
            _write_run(out / f"point_{k}", record, protocol)
        else:
            _dump(out / f"point_{k}" / "error.json", dict(sweep_value=value, error=error,
                                                         config=tasks[k][2]))
            log.error("sweep point %d (%s) failed: %s", k, value, error)
        rows.append(_summary_row(value, record, error))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in SUMMARY_COLUMNS])
    return [r for _, _, r, _, _ in results]


# -- ness -------------------------------------------------------------------------

def run_ness(cfg: dict) -> dict:
    """Solve the periodic steady state for the configured parameters (u = 0 if none)."""
    problem = cf.build_problem(cfg)
    ev = problem.evaluate(problem.protocol.params, gradient=False)
    ness = ev.ness
    return dict(config=cfg, harmonics=ness.grid.harmonics.tolist(),
                rho_real=np.real(ness.coeffs).tolist(), rho_imag=np.imag(ness.coeffs).tolist(),
                **ledger_dict(ev),
                diagnostics={k: (float(v) if isinstance(v, (float, np.floating)) else v)
                             for k, v in ev.diagnostics.items()})


# -- validate ---------------------------------------------------------------------

def _check(name, value, tol, hint="") -> dict:
    ok = bool(np.isfinite(value) and value <= tol)
    return dict(name=name, value=float(value), tolerance=tol, passed=ok,
                message="" if ok else hint)


def validate(cfg: dict, seed: int | None = None) -> list[dict]:
    """Oracle cross-checks on the configured model and protocol."""
    rng = np.random.default_rng(cfg["optimizer"]["seed"] if seed is None else seed)
    cfg = copy.deepcopy(cfg)
    cfg.pop("sweep", None)
    problem = cf.build_problem(cfg)
    prot = problem.protocol
    u = rng.uniform(-0.5, 0.5, prot.n_params) * prot.delta / np.r_[1, np.repeat(
        np.arange(1, prot.n_modes + 1), 2)]
    checks = []
    n = problem.grid.n_harmonics

    ev = problem.evaluate(u)
    fine = problem.with_grid(2 * n - 1).evaluate(u, gradient=False)
    checks.append(_check("convergence in N (|P(2N-1) - P(N)|)",
                         abs(fine.ledger.power - ev.ledger.power), 1e-6,
                         f"spectral truncation too coarse at N={n}: increase "
                         f"spectral.n_harmonics (e.g. to {max(2 * n - 1, 65)})"))
    checks.append(_check("first law (relative)", ev.ledger.first_law_relative, 1e-8,
                         "energy balance violated; check the model couplings"))

    rk = oracle.propagate(problem.model, prot, u, steps_per_cycle=4096)
    ref = rk.fourier_coefficients(ev.ness.grid.harmonics)
    checks.append(_check("spectral vs RK4 (coefficient max-norm)",
                         np.abs(ref - ev.ness.coeffs).max(), 1e-6,
                         f"spectral and time-domain NESS disagree at N={n}: "
                         "increase spectral.n_harmonics"))

    def power(x):
        return problem.evaluate(x, gradient=False).ledger.power

    fd = oracle.finite_difference_gradient(power, u, 1e-6)
    g = ev.ledger.grad_power
    checks.append(_check("power gradient vs finite differences (relative)",
                         np.abs(fd - g).max() / max(np.abs(fd).max(), 1e-300), 1e-5,
                         "analytic gradient disagrees with finite differences"))

    phys = _physical(cfg)
    best = oracle.otto_max(**phys)
    worst = 0.0
    for tf in (0.125, 0.25, 0.5, 1.0, 2.0):
        t = tf * 2 * np.pi / cfg["model"]["delta"]
        sim = oracle.simulate_two_stroke(problem.model, t, best.eps1, best.eps2,
                                         prot.stroke_fraction)
        ref_p = oracle.otto_power(t, best.eps1, best.eps2, phys["gamma"], phys["beta_hot"],
                                  phys["beta_cold"])
        worst = max(worst, abs(sim - ref_p) / abs(ref_p))
    checks.append(_check("constant-gap simulation vs closed form (relative)", worst, 1e-6,
                         "two-stroke simulation disagrees with the closed-form power"))
    return checks


# -- entry point ------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floquet-qtm",
                                description="Periodic steady states and power optimization "
                                            "of driven open quantum thermal machines.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "optimize a single configuration"),
                       ("sweep", "optimize every value of the sweep block"),
                       ("ness", "solve and dump the periodic steady state only"),
                       ("validate", "run the oracle cross-check battery")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="JSON config file (defaults if omitted)")
        s.add_argument("--out", help="output directory (overrides output.directory)")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--seed", type=int, help="override optimizer.seed")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> dict:
    cfg = cf.load_config(args.config) if args.config else cf.validate_config({})
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed: must be non-negative")
        cfg["optimizer"]["seed"] = args.seed
    if args.jobs < 1:
        raise ConfigError("--jobs: must be at least 1")
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        out = Path(args.out or cfg["output"]["directory"])
        # constructor-level checks (e.g. inconsistent protocol settings) count as config errors
        cf.build_problem(cfg)
    except (ConfigError, InvalidArgument, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            record, protocol = run_single(cfg, jobs=args.jobs)
            _write_run(out, record, protocol)
            print(f"P = {record['P']:.10g}  G = {record['G']:.10g}  "
                  f"baseline = {record['P_constant_gap']:.10g}  -> {out / 'record.json'}")
        elif args.command == "sweep":
            records = run_sweep(cfg, out, jobs=args.jobs)
            failed = sum(r is None for r in records)
            print(f"{len(records) - failed}/{len(records)} points ok -> {out / 'summary.csv'}")
            if failed:
                return EXIT_SOLVER
        elif args.command == "ness":
            dump = run_ness(cfg)
            _dump(out / "ness.json", dump)
            print(f"P = {dump['P']:.10g}  J1 = {dump['J1']:.10g}  J2 = {dump['J2']:.10g}  "
                  f"-> {out / 'ness.json'}")
        else:
            checks = validate(cfg, args.seed)
            for c in checks:
                flag = "PASS" if c["passed"] else "FAIL"
                line = f"{flag}  {c['name']}: {c['value']:.3e} (tol {c['tolerance']:.0e})"
                print(line + (f"  -- {c['message']}" if c["message"] else ""))
            _dump(out / "validation.json", dict(config=cfg, checks=checks))
            if not all(c["passed"] for c in checks):
                return EXIT_VALIDATION
    except FloquetQTMError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
