"""Command-line front end: ``solve``, ``sweep``, ``compare`` and ``cycle synth``.

Exit codes: 0 success, 1 infeasible problem, 2 configuration or file error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from hevdp import __version__
from hevdp.config import ConfigError, RunConfig
from hevdp.cycleio import CycleError, parse_segments, save_cycle, synth_cycle
from hevdp.dpcore import GridResolutionError, InfeasibleProblemError, solve
from hevdp.maps import MapFileError
from hevdp.powertrain import ModelError
from hevdp.metrics import (
    StrategyReport,
    read_report,
    report,
    summary_text,
    write_exports,
    write_report,
)

log = logging.getLogger("hevdp")

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2

WEIGHT_KEYS = {"phi_gamma": "phi_gamma_g", "phi_epsilon": "phi_epsilon_g", "phi_tres": "phi_tres_g"}
# metric, comparison, threshold
DEFAULT_TARGETS = {
    "phi_gamma": ("shifts_per_min", "<", 1.0),
    "phi_epsilon": ("starts_per_min", "<", 0.67),
    "phi_tres": ("avg_torque_reserve_pct", ">=", 65.0),
}
TABLE_HEADERS = ("Fuel economy", "Gear shifts", "Engine starts", "Torque reserve")
TABLE_UNITS = ("", "#/min", "#/min", "%")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --- configuration ------------------------------------------------------------


def load_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    cfg = RunConfig.load(path) if path else RunConfig()
    overrides = {}
    if getattr(args, "timestep", None) is not None:
        overrides["timestep"] = args.timestep
    if getattr(args, "soc_nodes", None) is not None:
        overrides["soc_nodes"] = args.soc_nodes
    if getattr(args, "alpha_nodes", None) is not None:
        overrides["alpha_nodes"] = args.alpha_nodes
    if getattr(args, "dump_policy", False):
        overrides["dump_policy"] = True
    if getattr(args, "label", None):
        overrides["label"] = args.label
    cfg = replace(cfg, **overrides)
    cfg.check()
    return cfg


def out_dir(args) -> Path:
    return Path(getattr(args, "out", None) or "runs")


# --- solve ----------------------------------------------------------------------


def run_solve(cfg: RunConfig, base: Path, compat: bool = False) -> tuple[Path, StrategyReport]:
    """Solve one configuration and write its run directory."""
    problem = cfg.build_problem()
    t0 = time.perf_counter()
    sol = solve(problem)
    elapsed = time.perf_counter() - t0
    traj = sol.trajectory
    rep = report(traj)
    run = base / cfg.config_hash()
    run.mkdir(parents=True, exist_ok=True)
    label = cfg.strategy_label()
    (run / "config.yaml").write_text(cfg.dumps(), encoding="utf-8")
    meta = {
        "config_hash": cfg.config_hash(),
        "grid_hash": cfg.grid_hash(),
        "cycle_digest": problem.cycle.digest(),
        "cycle_name": problem.cycle.name,
        "label": label,
        "soc_cell": problem.grids.soc_cell,
        "soc_target": sol.terminal.soc_target,
        "value_at_x0_g": sol.value_at(problem.x0),
    }
    (run / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_report(rep, run)
    write_exports(traj, run)
    (run / "summary.txt").write_text(summary_text(rep, label, compat), encoding="utf-8")
    if cfg.dump_policy:
        sol.save(run / "policy", header={"config_hash": meta["config_hash"]})
    # non-reproducible metadata lives apart from the data files
    (run / "run_meta.json").write_text(
        json.dumps({"hevdp_version": __version__, "solve_seconds": round(elapsed, 3)}, indent=2) + "\n",
        encoding="utf-8",
    )
    return run, rep


def cmd_solve(args) -> int:
    cfg = load_config(args)
    try:
        run, rep = run_solve(cfg, out_dir(args), args.table3_compat)
    except InfeasibleProblemError as exc:
        raise CliError(EXIT_INFEASIBLE, f"infeasible problem: {exc}") from None
    except GridResolutionError as exc:
        raise CliError(EXIT_INFEASIBLE, str(exc)) from None
    print(summary_text(rep, cfg.strategy_label(), args.table3_compat), end="")
    print(f"run directory: {run}")
    return EXIT_OK


# --- sweep ----------------------------------------------------------------------


def parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"values: expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise CliError(EXIT_CONFIG, "values: empty list")
    if any(v < 0 or not math.isfinite(v) for v in values):
        raise CliError(EXIT_CONFIG, "values: weights must be finite and non-negative")
    return values


def qualifies(rep: StrategyReport, target) -> bool:
    metric, op, threshold = target
    x = getattr(rep, metric)
    return x < threshold if op == "<" else x >= threshold


def cmd_sweep(args) -> int:
    if args.weight not in WEIGHT_KEYS:
        raise CliError(EXIT_CONFIG, f"weight: must be one of {', '.join(WEIGHT_KEYS)}")
    values = parse_values(args.values)
    cfg = load_config(args)
    cfg.build_problem()  # surface config errors before the first solve
    metric, op, threshold = DEFAULT_TARGETS[args.weight]
    if args.target is not None:
        threshold = args.target
    target = (metric, op, threshold)
    base = out_dir(args)
    rows = []
    for v in values:
        vcfg = replace(cfg, **{WEIGHT_KEYS[args.weight]: v})
        try:
            run, rep = run_solve(vcfg, base, args.table3_compat)
            rows.append((v, rep, run, None))
        except (InfeasibleProblemError, GridResolutionError) as exc:
            rows.append((v, None, None, str(exc)))
    columns = ["value", "fuel_l_per_100km", "shifts_per_min", "starts_per_min", "avg_torque_reserve_pct",
               "qualifies", "run_dir", "error"]
    base.mkdir(parents=True, exist_ok=True)
    table_path = base / f"sweep_{args.weight}.csv"
    with table_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for v, rep, run, err in rows:
            if rep is None:
                w.writerow([repr(v), "", "", "", "", "", "", err])
            else:
                w.writerow([repr(v), repr(rep.fuel_l_per_100km), repr(rep.shifts_per_min),
                            repr(rep.starts_per_min), repr(rep.avg_torque_reserve_pct),
                            int(qualifies(rep, target)), run.name, ""])
    print(f"sweep over {args.weight} (target: {metric} {op} {threshold:g})")
    print(f"{'value':>10}{'l/100km':>10}{'shifts/min':>12}{'starts/min':>12}{'reserve %':>11}  flag")
    for v, rep, run, err in rows:
        if rep is None:
            print(f"{v:>10g}  INFEASIBLE: {err}")
        else:
            flag = "meets target" if qualifies(rep, target) else ""
            print(f"{v:>10g}{rep.fuel_l_per_100km:>10.3f}{rep.shifts_per_min:>12.3f}"
                  f"{rep.starts_per_min:>12.3f}{rep.avg_torque_reserve_pct:>11.2f}  {flag}")
    ok = [(v, rep) for v, rep, _, _ in rows if rep is not None and qualifies(rep, target)]
    if ok:
        print(f"smallest qualifying {args.weight}: {min(v for v, _ in ok):g}")
    else:
        print(f"no value of {args.weight} meets the target")
    print(f"sweep table: {table_path}")
    return EXIT_OK


# --- compare --------------------------------------------------------------------


def _read_run(directory: Path) -> tuple[StrategyReport, dict]:
    if not (directory / "report.json").is_file():
        raise CliError(EXIT_CONFIG, f"{directory}: report.json not found")
    meta_path = directory / "run.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.is_file() else {}
    return read_report(directory), meta


def compare_table(runs: list[tuple[StrategyReport, dict]], compat: bool = False) -> str:
    """Strategy comparison: absolute fuel economy for the first run, deltas in % after."""
    labels = []
    for i, (_, meta) in enumerate(runs):
        letter = chr(ord("a") + i) if i < 26 else str(i + 1)
        labels.append(f"{letter}) {meta.get('label', 'run')}")
    lw = max(24, max(len(s) for s in labels) + 2)
    head = f"{'':<{lw}}" + "".join(f"{h:>16}" for h in TABLE_HEADERS)
    units = f"{'':<{lw}}" + "".join(f"{u:>16}" for u in TABLE_UNITS)
    lines = [head, units]
    ref = runs[0][0].fuel_l_per_100km
    for i, ((rep, _), label) in enumerate(zip(runs, labels)):
        if i == 0:
            fuel = f"{rep.fuel_l_per_100km:.2f} l/100km"
        else:
            fuel = f"{(rep.fuel_l_per_100km / ref - 1.0) * 100.0:+.1f} %"
        lines.append(
            f"{label:<{lw}}{fuel:>16}{rep.shifts_per_min:>16.2f}{rep.starts_per_min:>16.2f}"
            f"{rep.avg_torque_reserve_pct:>14.1f} %"
        )
    lines.append("")
    modes = list(runs[0][0].hybrid_shares(compat).keys())
    lines.append(f"{'':<{lw}}" + "".join(f"{m:>17}" for m in modes))
    for (rep, _), label in zip(runs, labels):
        shares = rep.hybrid_shares(compat)
        lines.append(f"{label:<{lw}}" + "".join(f"{shares[m] * 100:>15.2f} %" for m in modes))
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    dirs = [Path(d) for d in args.runs]
    if len(dirs) < 2:
        raise CliError(EXIT_CONFIG, "compare needs at least two run directories")
    runs = [_read_run(d) for d in dirs]
    grids = {m.get("grid_hash") for _, m in runs}
    if len(grids) > 1 and not args.allow_mixed_grids:
        raise CliError(EXIT_CONFIG, "runs use different DP grids; pass --allow-mixed-grids to compare anyway")
    cycles = {m.get("cycle_digest") for _, m in runs}
    if len(cycles) > 1:
        print("WARNING: runs were solved on different drive cycles; fuel deltas are not like-for-like")
    print(compare_table(runs, args.table3_compat), end="")
    return EXIT_OK


# --- cycle synth ------------------------------------------------------------------


def cmd_cycle_synth(args) -> int:
    try:
        segs = parse_segments(args.segments)
        ts = args.timestep if args.timestep is not None else 1.0
        cyc = synth_cycle(segs, ts, name=Path(args.output).stem)
    except CycleError as exc:
        raise CliError(EXIT_CONFIG, f"segments: {exc}") from None
    save_cycle(cyc, args.output)
    print(f"wrote {args.output}: {len(cyc)} samples, {cyc.duration:g} s, {cyc.distance / 1000:.3f} km, "
          f"max {cyc.speed.max():.2f} m/s")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", metavar="PATH", help="run configuration (YAML)", **d)
    parser.add_argument("--out", metavar="DIR", help="output base directory (default: runs)", **d)
    parser.add_argument("--timestep", type=float, metavar="SECONDS", help="cycle resampling step", **d)
    parser.add_argument("--soc-nodes", type=int, metavar="N", help="SOC grid size", **d)
    parser.add_argument("--alpha-nodes", type=int, metavar="N", help="torque-split grid size", **d)
    parser.add_argument("--table3-compat", action="store_true",
                        help="fold Regen and Standstill time into PureElectric", **d)
    if not suppress:
        parser.set_defaults(config=None, out=None, timestep=None, soc_nodes=None, alpha_nodes=None,
                            table3_compat=False)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hevdp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one configuration")
    _global_flags(s, suppress=True)
    s.add_argument("--label", help="strategy label for reports")
    s.add_argument("--dump-policy", action="store_true", help="write policy/value matrices")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="one solve per penalty weight value")
    _global_flags(s, suppress=True)
    s.add_argument("weight", help="phi_gamma, phi_epsilon or phi_tres")
    s.add_argument("values", help="comma-separated weights in grams, e.g. 0,0.1,0.5,2")
    s.add_argument("--target", type=float, help="override the metric threshold used to flag rows")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare", help="compare run directories side by side")
    _global_flags(s, suppress=True)
    s.add_argument("runs", nargs="+", metavar="RUN_DIR")
    s.add_argument("--allow-mixed-grids", action="store_true")
    s.set_defaults(func=cmd_compare)

    c = sub.add_parser("cycle", help="drive cycle utilities")
    csub = c.add_subparsers(dest="cycle_command", required=True)
    s = csub.add_parser("synth", help="write a trapezoidal synthetic cycle")
    _global_flags(s, suppress=True)
    s.add_argument("--segments", required=True, help="target:ramp:hold,... in m/s and s")
    s.add_argument("--output", "-o", required=True, metavar="PATH")
    s.set_defaults(func=cmd_cycle_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CycleError, MapFileError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleProblemError as exc:
        print(f"error: infeasible problem: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
