"""Command line entry point: ``bess-opm simulate | solve-step | compare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import enki
from .cell import CellState
from .errors import BessOpmError, ConfigError, SimulationFault
from .policy import features, psr
from .problem import SOC_FEATURE_FLOOR

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FAULT = 3

log = logging.getLogger("bess_opm")


def _int_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def _resolve_scenario(text):
    from .sim.scenario import bundled

    path = Path(text)
    if path.exists() or path.suffix:
        return path
    return bundled(text)


def cmd_simulate(args):
    from .sim import run_closed_loop
    from .sim.report import write_report
    from .sim.scenario import load_scenario

    sc = load_scenario(_resolve_scenario(args.scenario), seed=args.seed)
    full = True if args.full_series else sc.write_full_series()
    try:
        report = run_closed_loop(sc)
    except SimulationFault as exc:
        partial = getattr(exc, "report", None)
        if partial is not None:
            write_report(partial, args.out, full_series=full)
        raise
    write_report(report, args.out, full_series=full)
    s = report.summary
    print(
        json.dumps(
            {
                "out": str(args.out),
                "records": s["records"],
                "soc_dev_max": s["soc_dev_max"],
                "temp_dev_max": s["temp_dev_max"],
                "time_to_balance_s": s["time_to_balance_s"],
                "energy_loss_j": s["energy_loss_j"],
                "faults": s["faults"],
            },
            indent=2,
        )
    )
    return EXIT_OK


def _load_state(path, n):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read state: {exc.strerror}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg})", str(path)) from exc
    unknown = set(doc) - {"soc", "temp", "forecast", "theta_nominal"}
    if unknown:
        raise ConfigError("unknown key", f"state.{sorted(unknown)[0]}")
    try:
        soc = np.asarray(doc["soc"], dtype=float)
        temp = np.asarray(doc.get("temp", [298.0] * n), dtype=float)
    except KeyError as exc:
        raise ConfigError("missing key", f"state.{exc.args[0]}") from None
    if soc.shape != (n,) or temp.shape != (n,):
        raise ConfigError(f"expected {n} values", "state.soc")
    if np.any(soc < 0) or np.any(soc > 1):
        raise ConfigError("SoC must lie in [0, 1]", "state.soc")
    return CellState(soc, temp), doc.get("forecast"), doc.get("theta_nominal")


def cmd_solve_step(args):
    from .sim.demand import gen_demand
    from .sim.scenario import load_scenario

    sc = load_scenario(_resolve_scenario(args.scenario))
    state, forecast, nominal = _load_state(args.state, sc.n)
    if forecast is None:
        pred, _ = gen_demand(sc.demand, sc.opm.horizon * sc.dt, sc.dt, sc.seed)
        forecast = pred
    forecast = np.asarray(forecast, dtype=float)
    if forecast.shape != (sc.opm.horizon + 1,):
        raise ConfigError(f"expected {sc.opm.horizon + 1} values", "state.forecast")
    est = enki.solve(state, forecast, sc.params, sc.opm, sc.enki, sc.policy, theta_nominal=nominal)
    feat_state = CellState(np.maximum(state.soc, SOC_FEATURE_FLOOR), state.temp)
    mu = psr(features(feat_state, sc.params, forecast[0], sc.policy), est.mean)
    print(
        json.dumps(
            {
                "theta": est.mean.tolist(),
                "theta_cov": est.covariance.tolist(),
                "mu": mu.tolist(),
                "iterations": est.iterations_run,
                "lambdas": est.lambdas,
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_compare(args):
    from .sim.compare import compare, table_markdown, write_comparison

    rows = compare(args.sizes, args.horizons, args.particles, repeats=args.repeats, seed=args.seed)
    write_comparison(rows, args.out)
    sys.stdout.write(table_markdown(rows))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bess-opm", description="EnKI-based optimal power management simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a closed-loop scenario and write a report")
    s.add_argument("--scenario", required=True, help="scenario JSON path or bundled name")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--full-series", action="store_true", help="write per-cell columns regardless of n")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve-step", help="one OPM solve for a given pack state")
    s.add_argument("--scenario", required=True)
    s.add_argument("--state", required=True, type=Path, help="JSON with soc, temp[, forecast, theta_nominal]")
    s.set_defaults(func=cmd_solve_step)

    s = sub.add_parser("compare", help="EnKI vs cell-level runtime table")
    s.add_argument("--sizes", type=_int_list, default=[50, 100, 200])
    s.add_argument("--horizons", type=_int_list, default=[5, 10, 15])
    s.add_argument("--particles", type=_int_list, default=[50, 100])
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except BessOpmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
