"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import math
import os
import re
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import MICRO_ALPHAS, micro_instance, record_acceptance
from hevdp.cli import DEFAULT_TARGETS, TABLE_HEADERS, main, qualifies, run_solve
from hevdp.config import RunConfig
from hevdp.cycleio import builtin_cycle
from hevdp.dpcore import Problem, backward_pass, brute_force_solve, forward_pass
from hevdp.metrics import FUEL_DENSITY_G_PER_L, HYBRID_TABLE_MODES, read_report, report
from hevdp.powertrain import (
    Mode,
    Models,
    VehicleConfig,
    evaluate_stage,
    torque_demand,
    tractive_force,
)
from hevdp.state import Control, State

pytestmark = pytest.mark.slow

SWEEPS = {
    "phi_gamma": [0.0, 0.05, 0.2, 0.5, 2.0],
    "phi_epsilon": [0.0, 0.2, 0.5, 1.0, 2.0],
    "phi_tres": [0.0, 0.25, 0.5, 1.0, 2.0],
}
SWEEP_METRIC = {
    "phi_gamma": ("shifts_per_min", -1),
    "phi_epsilon": ("starts_per_min", -1),
    "phi_tres": ("avg_torque_reserve_pct", +1),
}


def say(capsys, line: str) -> None:
    with capsys.disabled():
        print("\n" + line)


def monotone_ok(xs, direction: int, rel_tol: float = 0.02) -> tuple[bool, str]:
    """At most one adjacent pair against ``direction``, by at most ``rel_tol``."""
    bad = []
    for a, b in zip(xs, xs[1:]):
        step = (b - a) * direction
        if step < 0:
            bad.append(-step / max(abs(a), 1e-12))
    ok = len(bad) == 0 or (len(bad) == 1 and bad[0] <= rel_tol)
    return ok, f"{len(bad)} violation(s)" + (f", worst {max(bad) * 100:.2f} %" if bad else "")


# --- 1 and 2: optimality oracle and Bellman consistency ---------------------------


@pytest.fixture(scope="module")
def micro_results():
    rng = np.random.default_rng(2024)
    rows = []
    t0 = time.perf_counter()
    while len(rows) < 30:
        cycle, mdl, w, grids, terminal, x0 = micro_instance(rng)
        bf, _ = brute_force_solve(cycle, mdl, w, x0, MICRO_ALPHAS, grids.n_gears, terminal)
        if not math.isfinite(bf):
            continue  # the random draw has no feasible control sequence at all
        sol = backward_pass(cycle, mdl, w, grids, terminal)
        traj = forward_pass(sol, x0, cycle, mdl, w)
        rows.append((bf, sol.value_at(x0), traj.total_cost_g, len(cycle), grids.n_gears))
    return rows, time.perf_counter() - t0


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


def test_criterion_1_dp_matches_enumeration(micro_results, capsys):
    rows, elapsed = micro_results
    worst = max(rel(v0, bf) for bf, v0, _, _, _ in rows)
    ok = len(rows) >= 25 and worst <= 1e-6 and elapsed < 30.0
    say(capsys, record_acceptance(
        1, ok, f"{len(rows)} micro-instances, worst relative gap {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 30 s)"))
    assert ok


def test_criterion_2_bellman_consistency(micro_results, capsys):
    rows, _ = micro_results
    worst = max(rel(cost, v0) for _, v0, cost, _, _ in rows)
    ok = worst <= 1e-9
    say(capsys, record_acceptance(2, ok, f"rollout cost vs V_0 on {len(rows)} instances, worst {worst:.2e} (<= 1e-9)"))
    assert ok


# --- 3, 4, 6, 8: the bundled half-hour cycle ----------------------------------------


@pytest.fixture(scope="module")
def mixed30_runs(tmp_path_factory):
    """Every sweep value solved through the CLI run path; one run directory each."""
    base = tmp_path_factory.mktemp("mixed30")
    cfg0 = RunConfig(cycles=["builtin:mixed30"])
    keys = {"phi_gamma": "phi_gamma_g", "phi_epsilon": "phi_epsilon_g", "phi_tres": "phi_tres_g"}
    out = {}
    t0 = time.perf_counter()
    for name, values in SWEEPS.items():
        out[name] = []
        for v in values:
            run, rep = run_solve(replace(cfg0, **{keys[name]: v}), base)
            out[name].append((v, run, rep))
    return out, time.perf_counter() - t0


def test_criterion_3_penalty_monotonicity(mixed30_runs, capsys):
    sweeps, elapsed = mixed30_runs
    parts, ok = [], elapsed < 15 * 60
    fuel_opt = sweeps["phi_gamma"][0][2].fuel_l_per_100km
    for name, rows in sweeps.items():
        metric, direction = SWEEP_METRIC[name]
        m = [getattr(rep, metric) for _, _, rep in rows]
        fuel = [rep.fuel_l_per_100km for _, _, rep in rows]
        m_ok, m_msg = monotone_ok(m, direction)
        f_ok, f_msg = monotone_ok(fuel, +1)
        lowest = min(fuel) >= fuel_opt - 1e-12
        ok &= m_ok and f_ok and lowest
        parts.append(f"{name}: {metric} " + " ".join(f"{x:.3g}" for x in m) + f" [{m_msg}]; fuel [{f_msg}]")
    shifts_top = sweeps["phi_gamma"][-1][2].shifts_per_min
    ok &= shifts_top < 1.0
    detail = "; ".join(parts) + f"; largest phi_gamma gives {shifts_top:.2f} shifts/min (< 1); {elapsed:.0f} s (< 900 s)"
    say(capsys, record_acceptance(3, ok, detail))
    assert ok


# --- 7: full scale ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def mixed52_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("mixed52")
    cfg = base / "mixed52.yaml"
    cfg.write_text("cycles: [builtin:mixed52]\ngrids: {soc_nodes: 201, alpha_nodes: 41, alpha_max: 2.0}\n")
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    runs = []
    for tag in ("first", "second"):
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "hevdp.cli", "solve", "--config", str(cfg), "--out", str(base / tag)],
            capture_output=True, text=True, env=env,
        )
        elapsed = time.perf_counter() - t0
        assert proc.returncode == 0, proc.stderr
        (run,) = [p for p in (base / tag).iterdir() if p.is_dir()]
        runs.append((run, elapsed))
    return runs


def test_criterion_7_full_scale(mixed52_runs, capsys):
    (ra, ta), (rb, tb) = mixed52_runs
    traj_rows = sum(1 for _ in (ra / "trajectory.csv").open()) - 1
    files = sorted(p.relative_to(ra) for p in ra.rglob("*") if p.is_file() and p.name != "run_meta.json")
    same = all((ra / f).read_bytes() == (rb / f).read_bytes() for f in files)
    cfg = RunConfig.load(ra / "config.yaml")
    shape_ok = (traj_rows == 3120 and cfg.soc_nodes == 201 and cfg.alpha_nodes == 41
                and cfg.build_models().vehicle.n_gears == 5)
    ok = shape_ok and max(ta, tb) < 300 and same and ra.name == rb.name
    say(capsys, record_acceptance(
        7, ok, f"3120 steps x 201 SOC x 5 gears x 2 engine states x 41 alpha: {ta:.1f} s and {tb:.1f} s "
               f"(< 300 s), {len(files)} data files byte-identical: {same}"))
    assert ok


# --- 4: charge sustaining on every accepted run ---------------------------------------------


def test_criterion_4_charge_sustaining(mixed30_runs, mixed52_runs, capsys):
    dirs = [run for rows in mixed30_runs[0].values() for _, run, _ in rows]
    dirs += [run for run, _ in mixed52_runs]
    worst = math.inf
    ok = True
    for run in dirs:
        meta = json.loads((run / "run.json").read_text())
        rep = read_report(run)
        margin = rep.soc_final - (meta["soc_target"] - meta["soc_cell"])
        worst = min(worst, margin)
        ok &= margin >= 0
    say(capsys, record_acceptance(
        4, ok, f"{len(dirs)} runs, smallest margin above target minus one SOC cell {worst:.5f}"))
    assert ok


# --- 5: physics ---------------------------------------------------------------------------------


def test_criterion_5_physics(capsys):
    rng = np.random.default_rng(5)
    models = Models()
    bat = models.battery
    worst_res, util_ok, n = 0.0, True, 0
    draws = 0
    while n < 10_000:
        draws += 1
        soc = rng.uniform(0.3, 0.8)
        v = float(rng.choice([0.0, rng.uniform(0, 40)], p=[0.05, 0.95]))
        a = rng.uniform(-3.0, 2.5)
        s = evaluate_stage(State(soc), Control(rng.uniform(0, 2), int(rng.integers(1, 6))), (v, a), models)
        if not bool(s.feasible):
            continue
        n += 1
        p, i = float(s.P_b), float(s.i_b)
        back = (float(bat.voc(soc)) - float(bat.r0(soc)) * i) * i
        worst_res = max(worst_res, abs(back - p) / max(abs(p), 1.0))
        util_ok &= 0.0 <= float(s.utilization) <= 1.0
    cfg = VehicleConfig()
    force = float(tractive_force(10.0, 0.0, cfg))
    t_d = float(torque_demand(force, 10.0, 3, cfg)[0])
    hand = f"{force:.4g}" == "216.4" and f"{t_d:.4g}" == "14.85"
    ok = worst_res < 1e-6 and util_ok and hand
    say(capsys, record_acceptance(
        5, ok, f"{n} feasible random stages ({draws} drawn): back-substitution residual {worst_res:.1e} "
               f"(< 1e-6), utilization in [0, 1]: {util_ok}; F = {force:.4g} N, T_d = {t_d:.4g} Nm"))
    assert ok


# --- 6: metric recomputation ----------------------------------------------------------------------


def test_criterion_6_metric_recomputation(capsys):
    from hevdp.dpcore import solve

    traj = solve(Problem(builtin_cycle("mixed30"))).trajectory
    rep = report(traj)
    gear = np.concatenate([[traj.prev_gear[0]], traj.gear])
    eng = np.concatenate([[traj.prev_engine[0]], traj.engine_on.astype(int)])
    shifts = int(np.sum(gear[1:] != gear[:-1]))
    starts = int(np.sum((eng[:-1] == 0) & (eng[1:] == 1)))
    minutes = len(traj) * traj.dt / 60.0
    fuel_g = float(np.sum(traj.fuel_rate * 1000.0 * traj.dt))
    km = float(np.sum(traj.speed) * traj.dt) / 1000.0
    four = [int(m) for m in HYBRID_TABLE_MODES]
    n_four = int(np.isin(traj.mode, four).sum())
    shares = {Mode(m).label: int(np.sum(traj.mode == m)) / n_four for m in four}
    checks = {
        "shift count": shifts == rep.n_shifts and shifts / minutes == rep.shifts_per_min,
        "start count": starts == rep.n_starts and starts / minutes == rep.starts_per_min,
        "mode shares": shares == rep.mode_shares,
        "fuel": rel(fuel_g, rep.fuel_g) <= 1e-9
                and rel(fuel_g / FUEL_DENSITY_G_PER_L / km * 100, rep.fuel_l_per_100km) <= 1e-9,
    }
    ok = all(checks.values())
    say(capsys, record_acceptance(
        6, ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items())
               + f" ({shifts} shifts, {starts} starts, {fuel_g:.2f} g)"))
    assert ok


# --- 8: comparison table format ------------------------------------------------------------------------------


def test_criterion_8_comparison_table(mixed30_runs, capsys):
    sweeps, _ = mixed30_runs
    chosen = [sweeps["phi_gamma"][0][1]]
    for name in ("phi_gamma", "phi_epsilon", "phi_tres"):
        rows = sweeps[name][1:]
        hit = [run for _, run, rep in rows if qualifies(rep, DEFAULT_TARGETS[name])]
        chosen.append(hit[0] if hit else rows[-1][1])
    with capsys.disabled():
        print()
    rc = main(["compare", *map(str, chosen)])
    text = capsys.readouterr().out
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0]
    cols = [h for h in TABLE_HEADERS if h in header]
    body = lines[2:6]
    pct = [re.search(r"([+-]\d+\.\d) %", ln) for ln in body[1:]]
    fuel0 = read_report(chosen[0]).fuel_l_per_100km
    expect = [f"{(read_report(r).fuel_l_per_100km / fuel0 - 1) * 100:+.1f}" for r in chosen[1:]]
    deltas_ok = "l/100km" in body[0] and all(m is not None for m in pct) and [m.group(1) for m in pct] == expect
    labels_ok = [ln.split(")")[0] for ln in body] == ["a", "b", "c", "d"]
    ok = rc == 0 and cols == list(TABLE_HEADERS) and len(header.split()) == 8 and deltas_ok and labels_ok
    with capsys.disabled():
        print(text, end="")
    say(capsys, record_acceptance(
        8, ok, f"4-row table with columns {', '.join(cols)}; fuel deltas vs first row {', '.join(expect)} %"))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
