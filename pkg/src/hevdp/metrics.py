"""Strategy metrics and plot-ready exports computed from a rollout."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hevdp.dpcore import Trajectory
from hevdp.powertrain import FUEL_DENSITY_G_PER_L, RPM, Mode

HYBRID_TABLE_MODES = (Mode.PURE_ELECTRIC, Mode.PURE_THERMAL, Mode.POWER_SPLIT, Mode.BATTERY_CHARGING)
ENGINE_HYBRID_MODES = (Mode.PURE_THERMAL, Mode.POWER_SPLIT, Mode.BATTERY_CHARGING)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyReport:
    fuel_l_per_100km: float
    shifts_per_min: float
    starts_per_min: float
    avg_torque_reserve_pct: float
    mode_shares: dict  # four traction modes, normalised over those modes
    supplementary_shares: dict  # Regen and Standstill, fraction of total time
    all_mode_shares: dict  # six modes, fraction of total time
    distance_km: float
    duration_min: float
    fuel_g: float
    cost_g: float
    n_shifts: int
    n_starts: int
    soc_initial: float
    soc_final: float
    extra: dict = field(default_factory=dict)

    def hybrid_shares(self, compat: bool = False) -> dict:
        """Four-mode shares; ``compat`` folds Regen and Standstill into PureElectric."""
        if not compat:
            return dict(self.mode_shares)
        out = {m.label: self.all_mode_shares[m.label] for m in HYBRID_TABLE_MODES}
        out[Mode.PURE_ELECTRIC.label] += sum(self.supplementary_shares.values())
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyReport":
        d = dict(d)
        if d.get("avg_torque_reserve_pct") is None:
            d["avg_torque_reserve_pct"] = float("nan")
        return cls(**d)


def count_shifts(traj: Trajectory) -> int:
    return int(np.count_nonzero(traj.gear != traj.prev_gear))


def count_starts(traj: Trajectory) -> int:
    return int(np.count_nonzero(traj.engine_on & (traj.prev_engine == 0)))


def report(traj: Trajectory) -> StrategyReport:
    """Fuel economy, event rates, torque reserve and mode time shares.

    Event counts include the transition out of the initial state, which is
    what the penalties charge.
    """
    if len(traj) == 0:
        raise MetricsError("empty trajectory")
    dist_km = traj.distance_m / 1000.0
    if not dist_km > 0:
        raise MetricsError("trajectory covers zero distance")
    minutes = traj.duration_s / 60.0
    fuel_g = traj.total_fuel_g
    n_shifts, n_starts = count_shifts(traj), count_starts(traj)

    moving = traj.traction
    if np.any(moving):
        reserve = float(np.mean(1.0 - traj.utilization[moving]) * 100.0)
    else:
        reserve = float("nan")

    counts = {m: int(np.count_nonzero(traj.mode == m)) for m in Mode}
    n = len(traj)
    all_shares = {m.label: counts[m] / n for m in Mode}
    n_hyb = sum(counts[m] for m in HYBRID_TABLE_MODES)
    shares = {m.label: (counts[m] / n_hyb if n_hyb else 0.0) for m in HYBRID_TABLE_MODES}
    supp = {m.label: counts[m] / n for m in (Mode.REGEN, Mode.STANDSTILL)}

    return StrategyReport(
        fuel_l_per_100km=fuel_g / FUEL_DENSITY_G_PER_L / dist_km * 100.0,
        shifts_per_min=n_shifts / minutes,
        starts_per_min=n_starts / minutes,
        avg_torque_reserve_pct=reserve,
        mode_shares=shares,
        supplementary_shares=supp,
        all_mode_shares=all_shares,
        distance_km=dist_km,
        duration_min=minutes,
        fuel_g=fuel_g,
        cost_g=traj.total_cost_g,
        n_shifts=n_shifts,
        n_starts=n_starts,
        soc_initial=float(traj.soc[0]),
        soc_final=float(traj.soc[-1]),
    )


def export_operating_points(traj: Trajectory) -> list[dict]:
    """Engine-on samples: speed (rpm), torque, fuel rate and mode."""
    rows = []
    for k in np.flatnonzero(traj.T_eng > 0):
        rows.append({
            "time_s": float(k * traj.dt),
            "speed_rpm": float(traj.omega_in[k] / RPM),
            "torque_nm": float(traj.T_eng[k]),
            "fuel_g_per_s": float(traj.fuel_rate[k] * 1000.0),
            "mode": Mode(int(traj.mode[k])).label,
        })
    return rows


def export_gear_pattern(traj: Trajectory) -> list[dict]:
    """Hybrid-mode samples (engine delivering torque): vehicle speed, engine power, gear."""
    keep = np.isin(traj.mode, [int(m) for m in ENGINE_HYBRID_MODES])
    rows = []
    for k in np.flatnonzero(keep):
        rows.append({
            "time_s": float(k * traj.dt),
            "speed_mps": float(traj.speed[k]),
            "engine_power_kw": float(traj.T_eng[k] * traj.omega_in[k] / 1000.0),
            "gear": int(traj.gear[k]),
            "mode": Mode(int(traj.mode[k])).label,
        })
    return rows


def export_soc_profile(traj: Trajectory) -> list[dict]:
    return [{"time_s": float(k * traj.dt), "soc": float(s)} for k, s in enumerate(traj.soc)]


def export_trajectory(traj: Trajectory) -> list[dict]:
    rows = []
    for k in range(len(traj)):
        rows.append({
            "time_s": float(k * traj.dt),
            "speed_mps": float(traj.speed[k]),
            "accel_mps2": float(traj.accel[k]),
            "soc": float(traj.soc[k]),
            "prev_gear": int(traj.prev_gear[k]),
            "prev_engine": int(traj.prev_engine[k]),
            "alpha": float(traj.alpha[k]),
            "gear": int(traj.gear[k]),
            "T_d_nm": float(traj.T_d[k]),
            "omega_in_rads": float(traj.omega_in[k]),
            "T_eng_nm": float(traj.T_eng[k]),
            "T_em_nm": float(traj.T_em[k]),
            "T_brake_nm": float(traj.T_brake[k]),
            "fuel_g_per_s": float(traj.fuel_rate[k] * 1000.0),
            "P_b_w": float(traj.P_b[k]),
            "i_b_a": float(traj.i_b[k]),
            "engine_on": int(traj.engine_on[k]),
            "mode": Mode(int(traj.mode[k])).label,
            "utilization": float(traj.utilization[k]),
            "fuel_g": float(traj.cost.fuel_g[k]),
            "shift_g": float(traj.cost.shift_g[k]),
            "start_g": float(traj.cost.start_g[k]),
            "tres_g": float(traj.cost.tres_g[k]),
        })
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(rows: list[dict], path, columns: list[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


OPERATING_POINT_COLUMNS = ["time_s", "speed_rpm", "torque_nm", "fuel_g_per_s", "mode"]
GEAR_PATTERN_COLUMNS = ["time_s", "speed_mps", "engine_power_kw", "gear", "mode"]
SOC_COLUMNS = ["time_s", "soc"]


def write_exports(traj: Trajectory, directory) -> None:
    d = Path(directory)
    write_csv(export_operating_points(traj), d / "operating_points.csv", OPERATING_POINT_COLUMNS)
    write_csv(export_gear_pattern(traj), d / "gear_pattern.csv", GEAR_PATTERN_COLUMNS)
    write_csv(export_soc_profile(traj), d / "soc_profile.csv", SOC_COLUMNS)
    rows = export_trajectory(traj)
    write_csv(rows, d / "trajectory.csv", list(rows[0].keys()) if rows else ["time_s"])


def write_report(rep: StrategyReport, directory) -> None:
    d = Path(directory)
    (d / "report.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(directory) -> StrategyReport:
    path = Path(directory) / "report.json"
    return StrategyReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


def summary_text(rep: StrategyReport, label: str, compat: bool = False) -> str:
    """Aligned plain-text block: one strategy row plus mode shares."""
    lines = [
        f"{'strategy':<24}{'fuel economy':>16}{'gear shifts':>14}{'engine starts':>16}{'torque reserve':>17}",
        f"{'':<24}{'l/100km':>16}{'#/min':>14}{'#/min':>16}{'%':>17}",
        f"{label:<24}{rep.fuel_l_per_100km:>16.3f}{rep.shifts_per_min:>14.2f}"
        f"{rep.starts_per_min:>16.2f}{rep.avg_torque_reserve_pct:>17.1f}",
        "",
        "mode shares" + (" (regen/standstill folded into PureElectric)" if compat else ""),
    ]
    for name, share in rep.hybrid_shares(compat).items():
        lines.append(f"  {name:<18}{share * 100:>8.2f} %")
    if not compat:
        for name, share in rep.supplementary_shares.items():
            lines.append(f"  {name:<18}{share * 100:>8.2f} % of total time")
    lines += [
        "",
        f"distance {rep.distance_km:.3f} km, duration {rep.duration_min:.2f} min, fuel {rep.fuel_g:.2f} g, "
        f"SOC {rep.soc_initial:.4f} -> {rep.soc_final:.4f}",
    ]
    return "\n".join(lines) + "\n"
