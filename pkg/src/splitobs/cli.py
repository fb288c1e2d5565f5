"""Command-line entry point.

    splitobs <design|simulate|analyze|check> --scenario PATH [--out DIR] [--seed N]
             [--experimental-adaptive-switching] [--trace CSV] [--all-fixtures]

Exit status: 0 success, 1 certificate or rate failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analyzer
from .errors import FaultBreaksAssumptions, SchemaError, SplitObsError
from .netgraph import NetworkSnapshot
from .scenario import fixture_names, parse_scenario, with_flags, with_seed
from .simulator import InvalidSignal, simulate
from .switching import write_indicator_csv

log = logging.getLogger("splitobs")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
RATE_SLACK = 0.9


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("SPLITOBS_LOG", "WARNING").upper()
    logging.basicConfig(level=int(level) if level.isdigit() else getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(args):
    if not args.scenario:
        raise UsageError("--scenario is required")
    sc = parse_scenario(args.scenario)
    if args.seed is not None:
        sc = with_seed(sc, args.seed)
    if args.experimental_adaptive_switching:
        sc = with_flags(sc, experimental=True)
    return sc


def _out_dir(args) -> Path:
    d = Path(args.out or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _snapshots(sc):
    return [NetworkSnapshot.from_graph(g, sc.weights) for g in sc.graphs]


def design_report(sc) -> dict:
    des = sc.design
    rep = {"scenario": sc.name, "kind": des.kind, "rate": des.rate, "agents": []}
    for d in des.decs:
        rep["agents"].append({
            "agent": d.index + 1, "unobservable_dim": d.n_unobs, "K": d.K, "K_bar": d.K_bar,
            "quotient_eigenvalues": analyzer._cplx(np.linalg.eigvals(d.quotient_closed_loop))
            if d.quotient_closed_loop.size else [],
        })
    if des.kind == "continuous":
        rep.update(g=des.g, regime=des.regime, bound=des.bound.to_dict() if des.bound else None)
    else:
        rep.update(q=des.q, method=des.method,
                   q_choices=[c.to_dict() for c in (des.choice, des.alternative) if c is not None])
    return rep


def rate_verdict(sc, trace) -> tuple:
    """(passed, fit) for the decay-rate requirement lambda_est >= 0.9 * designed rate."""
    if sc.kind == "discrete":
        fit = analyzer.fit_decay_rate(trace, window=(1, len(trace.times) - 1), per_event=True)
        need = -math.log(sc.design.rate) * RATE_SLACK
    else:
        # after the last fault, else after the first 10% of the horizon
        t0 = max((f.time for f in sc.faults), default=0.1 * sc.horizon)
        fit = analyzer.fit_decay_rate(trace, window=(t0, sc.horizon))
        need = sc.design.rate * RATE_SLACK
    return fit.lambda_est >= need, fit, need


def cmd_design(args) -> int:
    sc = _load(args)
    rep = design_report(sc)
    checks = analyzer.check_design(sc.design, _snapshots(sc))
    rep["checks"] = checks.to_dict()
    (_out_dir(args) / "design.json").write_text(analyzer.dumps(rep))
    print(checks.table())
    return EXIT_OK if checks.passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    sc = _load(args)
    trace = simulate(sc)
    out = _out_dir(args)
    path = Path(sc.source.get("output", {}).get("trace") or out / "trace.csv") if sc.source else out / "trace.csv"
    if not path.is_absolute():
        path = out / path.name
    trace.write_csv(path)
    if sc.signal.n_switches:
        write_indicator_csv(sc.signal, out / "indicator.csv", h=min(sc.h, 0.001) if sc.kind == "continuous" else 1.0)
    print(f"wrote {path} ({len(trace.times)} samples, final |e| = {trace.e_norm[-1]:.3e})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    report = {}
    ok = True
    if args.trace:
        from .simulator import read_trace_csv

        cols = read_trace_csv(args.trace)
        if "t" not in cols or "e_norm" not in cols:
            raise UsageError("trace CSV needs 't' and 'e_norm' columns")
        fit = analyzer.fit_decay_rate(times=cols["t"], norms=cols["e_norm"])
        report["fit"] = fit.to_dict()
        print(f"lambda_est = {fit.lambda_est:.6f} over [{fit.window[0]:g}, {fit.window[1]:g}] "
              f"({fit.samples} samples, max log residual {fit.residual:.2e})")
    if args.scenario:
        sc = _load(args)
        if not args.trace:
            trace = simulate(sc)
            passed, fit, need = rate_verdict(sc, trace)
            ok &= passed
            report["fit"] = fit.to_dict()
            report["required_rate"] = need
            print(f"lambda_est = {fit.lambda_est:.6f} (required >= {need:.6f}) {'PASS' if passed else 'FAIL'}")
        report["spectra"] = [analyzer.spectrum_report(sc.design, s) for s in _snapshots(sc)]
        for k, sp in enumerate(report["spectra"]):
            print(f"graph {k + 1}: worst {'real part' if sp['kind'] == 'continuous' else 'modulus'} "
                  f"{sp['worst']:.6f}, margin {sp['margin']:.3e}, union error {sp['union_error']:.1e}")
    if not report:
        raise UsageError("analyze needs --scenario or --trace")
    (out / "analysis.json").write_text(analyzer.dumps(report))
    return EXIT_OK if ok else EXIT_FAIL


def check_scenario(sc) -> analyzer.CheckReport:
    """Design certificates plus trace-level checks for one scenario."""
    rep = analyzer.check_design(sc.design, _snapshots(sc), coupling=not sc.adaptive)
    trace = simulate(sc)
    rep.add("trace.error_consistency", trace.check() == 0.0, trace.check())
    if trace.dual_path_error is not None:
        rep.add("trace.dual_path", trace.dual_path_error <= 1e-9, trace.dual_path_error)
    if sc.adaptive:
        dg = np.diff(trace.gains, axis=0)
        rep.add("adaptive.gains_nondecreasing", bool(np.all(dg >= 0)), float(dg.min()) if dg.size else 0.0)
        ratio = trace.e_norm[-1] / trace.e_norm[0] if trace.e_norm[0] > 0 else 0.0
        rep.add("adaptive.error_reduction", ratio <= 1e-4, ratio)
    else:
        passed, fit, need = rate_verdict(sc, trace)
        rep.add("trace.decay_rate", passed, fit.lambda_est, f"required >= {need:.4f}")
    return rep


def cmd_check(args) -> int:
    if args.all_fixtures:
        names = fixture_names()

        def run(name):
            try:
                return name, check_scenario(parse_scenario(name)), None
            except SplitObsError as exc:
                return name, None, exc

        with ThreadPoolExecutor() as pool:
            results = list(pool.map(run, names))
        ok = True
        for name, rep, exc in results:
            good = rep is not None and rep.passed
            ok &= good
            print(f"{'PASS' if good else 'FAIL'}  {name}" + (f"  ({exc})" if exc else ""))
            if rep is not None and not rep.passed:
                print(rep.table())
        return EXIT_OK if ok else EXIT_FAIL
    sc = _load(args)
    rep = check_scenario(sc)
    (_out_dir(args) / "check.json").write_text(analyzer.dumps(rep.to_dict()))
    print(rep.table())
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "analyze": cmd_analyze, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitobs", description="Design, simulate and verify distributed observers.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--scenario", help="scenario JSON file or bundled fixture name")
    ap.add_argument("--out", help="output directory (default: current directory)")
    ap.add_argument("--seed", type=int, help="seed for generated signals and initial states")
    ap.add_argument("--experimental-adaptive-switching", action="store_true",
                    help="allow adaptive gains on switching graphs")
    ap.add_argument("--trace", help="trace CSV to analyze instead of simulating")
    ap.add_argument("--all-fixtures", action="store_true", help="with check: run every bundled fixture")
    return ap


def main(argv=None) -> int:
    _setup_logging()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except SchemaError as exc:
        print(f"error: invalid scenario {exc.path or ''}", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidSignal as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FaultBreaksAssumptions as exc:
        print(f"error: {args.scenario}: fault breaks {exc.assumption}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {args.scenario or args.trace or ''}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SplitObsError as exc:
        print(f"error: {args.scenario}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
