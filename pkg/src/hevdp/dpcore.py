"""Finite-horizon dynamic programming over (SOC, previous gear, previous engine state).

The backward pass tabulates the cost-to-go on a SOC grid for every discrete
(previous gear, previous engine state) pair. SOC is interpolated linearly;
an interpolation that touches an infinite node with non-zero weight is
infinite, so averaged-away infeasibility is never exploited.

Controls are enumerated gear-major then alpha, so ``argmin`` resolves ties
towards the lowest gear and then the lowest alpha.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hevdp.cost import (
    WEIGHT_NAMES,
    CostBreakdown,
    PenaltyWeights,
    reserve_penalty,
    shift_penalty,
    start_penalty,
)
from hevdp.cycleio import DriveCycle
from hevdp.powertrain import Models, battery_step, drivetrain
from hevdp.state import Control, State

log = logging.getLogger(__name__)

__all__ = [
    "BruteForceTooLarge",
    "Control",
    "GridResolutionError",
    "Grids",
    "InfeasibleProblemError",
    "Problem",
    "Solution",
    "State",
    "SweepRow",
    "TerminalSpec",
    "Trajectory",
    "backward_pass",
    "brute_force_solve",
    "forward_pass",
    "solve",
    "sweep",
]

NO_CONTROL = -1
BRUTE_FORCE_LIMIT = 10**7


class InfeasibleProblemError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class GridResolutionError(RuntimeError):
    pass


class BruteForceTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grids:
    soc_points: np.ndarray
    alpha_points: np.ndarray
    n_gears: int = 5

    def __post_init__(self):
        soc = np.asarray(self.soc_points, dtype=float)
        alpha = np.asarray(self.alpha_points, dtype=float)
        if soc.size < 2 or np.any(np.diff(soc) <= 0):
            raise ValueError("soc_points must be strictly ascending with at least 2 nodes")
        if alpha.size < 1 or np.any(np.diff(alpha) <= 0) or alpha[0] < 0:
            raise ValueError("alpha_points must be strictly ascending and non-negative")
        if not (np.any(alpha == 0.0) and np.any(alpha == 1.0)):
            raise ValueError("alpha_points must contain 0 and 1")
        if self.n_gears < 1:
            raise ValueError("n_gears must be >= 1")
        object.__setattr__(self, "soc_points", soc)
        object.__setattr__(self, "alpha_points", alpha)

    @classmethod
    def uniform(cls, soc_min=0.3, soc_max=0.8, soc_nodes=201, alpha_max=2.0, alpha_nodes=41, n_gears=5):
        return cls(np.linspace(soc_min, soc_max, soc_nodes), np.linspace(0.0, alpha_max, alpha_nodes), n_gears)

    @property
    def n_controls(self) -> int:
        return self.n_gears * self.alpha_points.size

    def control_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat (alpha, gear) arrays in tie-break order."""
        a = self.alpha_points.size
        gears = np.repeat(np.arange(1, self.n_gears + 1), a)
        alphas = np.tile(self.alpha_points, self.n_gears)
        return alphas, gears

    @property
    def soc_cell(self) -> float:
        return float(np.max(np.diff(self.soc_points)))

    def describe(self) -> dict:
        return {
            "soc_points": self.soc_points.tolist(),
            "alpha_points": self.alpha_points.tolist(),
            "n_gears": self.n_gears,
            "engine_states": [0, 1],
        }


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal cost on the final SOC.

    ``charge_sustaining``: zero at or above ``soc_target`` and a steep linear
    wall of ``wall_slope`` grams per unit SOC below it. The wall is finite so
    that the feasible region can move by less than one grid cell per step;
    rollouts ending more than one SOC cell below the target are rejected.
    ``linear``: ``weight * (soc_target - soc)`` grams.
    ``free``: zero everywhere.
    ``soc_target=None`` means the initial SOC.
    """

    kind: str = "charge_sustaining"
    soc_target: Optional[float] = None
    weight: float = 0.0
    wall_slope: float = 1e5

    def __post_init__(self):
        if self.kind not in ("charge_sustaining", "linear", "free"):
            raise ValueError(f"unknown terminal kind {self.kind!r}")
        if not self.wall_slope > 0:
            raise ValueError("wall_slope must be positive")

    def resolved(self, soc0: float) -> "TerminalSpec":
        if self.soc_target is not None or self.kind == "free":
            return self
        return TerminalSpec(self.kind, float(soc0), self.weight, self.wall_slope)

    def cost(self, soc) -> np.ndarray:
        soc = np.asarray(soc, dtype=float)
        if self.kind == "free":
            return np.zeros_like(soc)
        if self.soc_target is None:
            raise ValueError("terminal target unresolved; call resolved(soc0) first")
        if self.kind == "linear":
            return self.weight * (self.soc_target - soc)
        return self.wall_slope * np.maximum(self.soc_target - soc, 0.0)

    def satisfied(self, soc_final: float, tolerance: float) -> bool:
        if self.kind != "charge_sustaining":
            return True
        return soc_final >= self.soc_target - tolerance


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-step record of a rollout (length N); ``soc`` has N + 1 entries."""

    dt: float
    speed: np.ndarray
    accel: np.ndarray
    soc: np.ndarray
    prev_gear: np.ndarray
    prev_engine: np.ndarray
    alpha: np.ndarray
    gear: np.ndarray
    T_d: np.ndarray
    omega_in: np.ndarray
    T_eng: np.ndarray
    T_em: np.ndarray
    T_brake: np.ndarray
    fuel_rate: np.ndarray
    P_b: np.ndarray
    i_b: np.ndarray
    engine_on: np.ndarray
    mode: np.ndarray
    utilization: np.ndarray
    traction: np.ndarray
    cost: CostBreakdown
    terminal_g: float = 0.0

    def __len__(self) -> int:
        return self.speed.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def total_fuel_g(self) -> float:
        return float(np.sum(self.cost.fuel_g))

    @property
    def total_cost_g(self) -> float:
        """Running cost plus terminal cost, comparable with the value function."""
        return float(np.sum(self.cost.total_g)) + self.terminal_g

    @property
    def distance_m(self) -> float:
        return float(np.sum(self.speed) * self.dt)

    @property
    def duration_s(self) -> float:
        return len(self) * self.dt


@dataclass(frozen=True, eq=False)
class Solution:
    """Backward-pass result.

    ``values[k]`` has shape (soc, prev_gear, prev_engine); ``policy[k]`` holds
    the flat control index (``NO_CONTROL`` where nothing is feasible).
    """

    grids: Grids
    terminal: TerminalSpec
    policy: np.ndarray
    values: np.ndarray
    trajectory: Optional[Trajectory] = None

    @property
    def value(self) -> np.ndarray:
        return self.values[0]

    def control(self, k: int, node: int, prev_gear: int, prev_engine: int) -> Optional[Control]:
        c = int(self.policy[k, node, prev_gear - 1, prev_engine])
        if c == NO_CONTROL:
            return None
        alphas, gears = self.grids.control_arrays()
        return Control(float(alphas[c]), int(gears[c]))

    def value_at(self, x0: State) -> float:
        """V_0 at an initial state (linear in SOC, same rule as the recursion)."""
        v = _interp_values(
            self.values[0], self.grids.soc_points, np.array([[float(x0.soc)]]),
            np.array([int(x0.prev_gear) - 1]), np.array([int(x0.prev_engine)]),
        )
        return float(v[0, 0])

    def save(self, directory, header: dict | None = None) -> None:
        """Write ``policy.npy``, ``value.npy`` and a JSON header describing the grids."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "policy.npy", self.policy)
        np.save(d / "value.npy", self.values[0])
        meta = {
            "layout": "policy[k, soc_node, prev_gear-1, prev_engine] -> flat control index (gear-major, then alpha); -1 = none",
            "grids": self.grids.describe(),
            "terminal": asdict(self.terminal),
            **(header or {}),
        }
        (d / "policy.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything needed for one DP solve."""

    cycle: DriveCycle
    models: Models = field(default_factory=Models)
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    grids: Grids = field(default_factory=Grids.uniform)
    terminal: TerminalSpec = field(default_factory=TerminalSpec)
    x0: State = field(default_factory=lambda: State(0.55, 1, 0))

    def with_weight(self, name: str, value: float) -> "Problem":
        return Problem(self.cycle, self.models, self.weights.replace(**{name: float(value)}),
                       self.grids, self.terminal, self.x0)


# --- kernels shared by the backward and forward passes ----------------------


def _interp_values(vnext, soc_points, sigma, gidx, eidx):
    """Interpolate ``vnext[:, g, e]`` at ``sigma`` (shape (M, C)) for columns ``(gidx, eidx)``.

    Out-of-span SOC is clamped for lookup; infinite nodes with non-zero weight
    yield infinity.
    """
    n = soc_points.size
    sig = np.clip(np.nan_to_num(sigma, nan=soc_points[0]), soc_points[0], soc_points[-1])
    i = np.searchsorted(soc_points, sig, side="right") - 1
    i = np.clip(i, 0, n - 2)
    x0 = soc_points[i]
    w = (sig - x0) / (soc_points[i + 1] - x0)
    cols = vnext[:, gidx, eidx]  # (S, C)
    c = np.arange(cols.shape[1])[None, :]
    lo, hi = cols[i, c], cols[i + 1, c]
    lo_inf, hi_inf = np.isinf(lo), np.isinf(hi)
    val = (1.0 - w) * np.where(lo_inf, 0.0, lo) + w * np.where(hi_inf, 0.0, hi)
    dead = (lo_inf & (w < 1.0)) | (hi_inf & (w > 0.0))
    return np.where(dead, np.inf, val)


@dataclass(frozen=True, eq=False)
class _StepKernel:
    """Control-space evaluation of one time step, reused by both passes."""

    alphas: np.ndarray
    gears: np.ndarray
    gidx: np.ndarray
    drive: object
    run_g: np.ndarray  # fuel + reserve penalty per control
    fuel_g: np.ndarray
    tres_g: np.ndarray
    eidx: np.ndarray
    shift: np.ndarray  # (G_prev, C)
    start: np.ndarray  # (E_prev, C)

    @classmethod
    def build(cls, v, a, models, weights, grids):
        alphas, gears = grids.control_arrays()
        drive = drivetrain(alphas, gears, v, a, models)
        fuel_g = drive.fuel_rate * weights.dt * 1000.0
        tres_g = reserve_penalty(drive.utilization, drive.traction & (v > 0), weights)
        prev_g = np.arange(1, grids.n_gears + 1)[:, None]
        prev_e = np.array([0, 1])[:, None]
        return cls(
            alphas=alphas, gears=gears, gidx=gears - 1, drive=drive,
            run_g=fuel_g + tres_g, fuel_g=fuel_g, tres_g=tres_g,
            eidx=drive.engine_on.astype(int),
            shift=shift_penalty(gears[None, :], prev_g, weights),
            start=start_penalty(drive.engine_on[None, :], prev_e, weights),
        )

    def q(self, soc, vnext, soc_points, dt, models):
        """Running cost plus interpolated cost-to-go, shape (len(soc), C)."""
        ok, _, _, nxt, _, _ = battery_step(self.drive, soc[:, None], dt, models)
        cont = _interp_values(vnext, soc_points, nxt, self.gidx, self.eidx)
        return np.where(ok, self.run_g + cont, np.inf), nxt


def backward_pass(
    cycle: DriveCycle,
    models: Models,
    weights: PenaltyWeights,
    grids: Grids,
    terminal: TerminalSpec,
) -> Solution:
    """Tabulate the optimal cost-to-go and policy for every step and grid node."""
    if weights.dt != cycle.timestep:
        raise ValueError(f"weights.dt={weights.dt} does not match cycle timestep {cycle.timestep}")
    if grids.n_gears != models.vehicle.n_gears:
        raise ValueError("grid gear count does not match the vehicle")
    bat = models.battery
    if grids.soc_points[0] < bat.soc_min - 1e-12 or grids.soc_points[-1] > bat.soc_max + 1e-12:
        raise ValueError("SOC grid extends beyond the battery window")
    soc = grids.soc_points
    n, s, g = len(cycle), soc.size, grids.n_gears
    values = np.empty((n + 1, s, g, 2))
    values[n] = terminal.cost(soc)[:, None, None]
    policy = np.empty((n, s, g, 2), dtype=np.int16 if grids.n_controls < 2**15 else np.int32)
    for k in range(n - 1, -1, -1):
        kern = _StepKernel.build(cycle.speed[k], cycle.accel[k], models, weights, grids)
        q, _ = kern.q(soc, values[k + 1], soc, cycle.timestep, models)
        total = q[:, None, None, :] + kern.shift[None, :, None, :] + kern.start[None, None, :, :]
        best = np.argmin(total, axis=-1)
        vk = np.take_along_axis(total, best[..., None], axis=-1)[..., 0]
        values[k] = vk
        policy[k] = np.where(np.isfinite(vk), best, NO_CONTROL)
    return Solution(grids, terminal, policy, values)


def _first_failing_step(values: np.ndarray) -> int:
    dead = ~np.isfinite(values[:-1]).reshape(values.shape[0] - 1, -1).any(axis=1)
    return int(np.flatnonzero(dead).max()) if dead.any() else 0


def forward_pass(
    solution: Solution,
    x0: State,
    cycle: DriveCycle,
    models: Models,
    weights: PenaltyWeights,
) -> Trajectory:
    """Roll out the optimal policy with exact SOC dynamics.

    At each step the Bellman minimisation is repeated at the exact SOC
    against the stored cost-to-go, which reproduces the tabulated policy on
    grid nodes.
    """
    grids = solution.grids
    soc_pts = grids.soc_points
    if not soc_pts[0] - 1e-12 <= x0.soc <= soc_pts[-1] + 1e-12:
        raise ValueError(f"initial SOC {x0.soc} outside the grid span")
    n = len(cycle)
    rec = {name: [] for name in (
        "prev_gear", "prev_engine", "alpha", "gear", "T_d", "omega_in", "T_eng", "T_em", "T_brake",
        "fuel_rate", "P_b", "i_b", "engine_on", "mode", "utilization", "traction",
        "fuel_g", "shift_g", "start_g", "tres_g")}
    socs = [float(x0.soc)]
    soc, gp, ep = float(x0.soc), int(x0.prev_gear), int(x0.prev_engine)
    for k in range(n):
        v = cycle.speed[k]
        kern = _StepKernel.build(v, cycle.accel[k], models, weights, grids)
        q, _ = kern.q(np.array([soc]), solution.values[k + 1], soc_pts, cycle.timestep, models)
        total = q[0] + kern.shift[gp - 1] + kern.start[ep]
        c = int(np.argmin(total))
        if not np.isfinite(total[c]):
            if k == 0:
                raise InfeasibleProblemError(
                    _first_failing_step(solution.values),
                    f"no feasible control sequence from SOC={soc:.4f}, gear={gp}, engine={ep}",
                )
            raise GridResolutionError(
                f"rollout became infeasible at step {k} (SOC={soc:.5f}); refine the SOC grid"
            )
        d = kern.drive
        ok, p_b, i_b, nxt, t_em, t_brake = battery_step(d, np.array([[soc]]), cycle.timestep, models)
        rec["prev_gear"].append(gp)
        rec["prev_engine"].append(ep)
        rec["alpha"].append(kern.alphas[c])
        rec["gear"].append(kern.gears[c])
        rec["T_d"].append(d.T_d[c])
        rec["omega_in"].append(d.omega_in[c])
        rec["T_eng"].append(d.T_eng[c])
        rec["T_em"].append(np.broadcast_to(t_em, ok.shape)[0, c])
        rec["T_brake"].append(np.broadcast_to(t_brake, ok.shape)[0, c])
        rec["fuel_rate"].append(d.fuel_rate[c])
        rec["P_b"].append(np.broadcast_to(p_b, ok.shape)[0, c])
        rec["i_b"].append(i_b[0, c])
        rec["engine_on"].append(bool(d.engine_on[c]))
        rec["mode"].append(d.mode[c])
        rec["utilization"].append(d.utilization[c])
        rec["traction"].append(bool(d.traction[c] and v > 0))
        rec["fuel_g"].append(kern.fuel_g[c])
        rec["shift_g"].append(kern.shift[gp - 1, c])
        rec["start_g"].append(kern.start[ep, c])
        rec["tres_g"].append(kern.tres_g[c])
        soc = float(nxt[0, c])
        gp, ep = int(kern.gears[c]), int(d.engine_on[c])
        socs.append(soc)
    arr = {k: np.asarray(v) for k, v in rec.items()}
    terminal_g = float(solution.terminal.cost(soc))
    if not solution.terminal.satisfied(soc, grids.soc_cell):
        raise InfeasibleProblemError(
            n, f"final SOC {soc:.5f} is more than one grid cell below the target {solution.terminal.soc_target:.5f}"
        )
    return Trajectory(
        dt=cycle.timestep,
        speed=np.array(cycle.speed),
        accel=np.array(cycle.accel),
        soc=np.array(socs),
        prev_gear=arr["prev_gear"].astype(int),
        prev_engine=arr["prev_engine"].astype(int),
        alpha=arr["alpha"].astype(float),
        gear=arr["gear"].astype(int),
        T_d=arr["T_d"].astype(float),
        omega_in=arr["omega_in"].astype(float),
        T_eng=arr["T_eng"].astype(float),
        T_em=arr["T_em"].astype(float),
        T_brake=arr["T_brake"].astype(float),
        fuel_rate=arr["fuel_rate"].astype(float),
        P_b=arr["P_b"].astype(float),
        i_b=arr["i_b"].astype(float),
        engine_on=arr["engine_on"].astype(bool),
        mode=arr["mode"].astype(np.int8),
        utilization=arr["utilization"].astype(float),
        traction=arr["traction"].astype(bool),
        cost=CostBreakdown(
            fuel_g=arr["fuel_g"].astype(float),
            shift_g=arr["shift_g"].astype(float),
            start_g=arr["start_g"].astype(float),
            tres_g=arr["tres_g"].astype(float),
        ),
        terminal_g=terminal_g,
    )


def solve(problem: Problem) -> Solution:
    """Backward pass followed by a rollout from ``problem.x0``."""
    terminal = problem.terminal.resolved(problem.x0.soc)
    sol = backward_pass(problem.cycle, problem.models, problem.weights, problem.grids, terminal)
    traj = forward_pass(sol, problem.x0, problem.cycle, problem.models, problem.weights)
    return Solution(sol.grids, sol.terminal, sol.policy, sol.values, traj)


def brute_force_solve(
    cycle: DriveCycle,
    models: Models,
    weights: PenaltyWeights,
    x0: State,
    alpha_points: Sequence[float],
    n_gears: int,
    terminal: TerminalSpec,
) -> tuple[float, list[Control]]:
    """Exhaustive enumeration of all control sequences with exact SOC dynamics.

    Ties go to the lexicographically first sequence in (gear, alpha) order.
    """
    alpha_points = np.asarray(alpha_points, dtype=float)
    n_c = alpha_points.size * n_gears
    n = len(cycle)
    size = n_c**n
    if size > BRUTE_FORCE_LIMIT:
        raise BruteForceTooLarge(f"{n_c}^{n} = {size} sequences exceeds the limit of {BRUTE_FORCE_LIMIT}")
    terminal = terminal.resolved(x0.soc)
    alphas = np.tile(alpha_points, n_gears)
    gears = np.repeat(np.arange(1, n_gears + 1), alpha_points.size)
    soc = np.array([float(x0.soc)])
    gp = np.array([int(x0.prev_gear)])
    ep = np.array([int(x0.prev_engine)])
    acc = np.zeros(1)
    for k in range(n):
        v = cycle.speed[k]
        d = drivetrain(alphas, gears, v, cycle.accel[k], models)
        ok, _, _, nxt, _, _ = battery_step(d, soc[:, None], cycle.timestep, models)
        stage = (
            d.fuel_rate * weights.dt * 1000.0
            + shift_penalty(gears[None, :], gp[:, None], weights)
            + start_penalty(d.engine_on[None, :], ep[:, None], weights)
            + reserve_penalty(d.utilization, d.traction & (v > 0), weights)
        )
        acc = np.where(ok, acc[:, None] + stage, np.inf).ravel()
        soc = np.broadcast_to(nxt, ok.shape).ravel()
        gp = np.broadcast_to(gears, ok.shape).ravel()
        ep = np.broadcast_to(d.engine_on.astype(int), ok.shape).ravel()
    total = acc + np.where(np.isfinite(acc), terminal.cost(np.nan_to_num(soc, nan=0.0)), np.inf)
    best = int(np.argmin(total))
    digits = []
    rem = best
    for _ in range(n):
        rem, c = divmod(rem, n_c)
        digits.append(c)
    seq = [Control(float(alphas[c]), int(gears[c])) for c in reversed(digits)]
    return float(total[best]), seq


# --- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    value: float
    report: Optional[object] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _sweep_one(args):
    from hevdp.metrics import report

    problem, name, value = args
    try:
        sol = solve(problem.with_weight(name, value))
    except (InfeasibleProblemError, GridResolutionError) as exc:
        return SweepRow(float(value), None, str(exc))
    return SweepRow(float(value), report(sol.trajectory), None)


def sweep(weight_name: str, values: Sequence[float], problem: Problem, jobs: int = 1) -> list[SweepRow]:
    """One full solve per weight value; rows are returned in input order."""
    if weight_name not in WEIGHT_NAMES:
        raise ValueError(f"weight must be one of {', '.join(WEIGHT_NAMES)}, got {weight_name!r}")
    tasks = [(problem, weight_name, float(v)) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_sweep_one, tasks))
    rows = []
    for t in tasks:
        log.info("sweep %s=%g", weight_name, t[2])
        rows.append(_sweep_one(t))
    return rows
