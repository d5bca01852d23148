"""Quasi-static backward-facing model of a p2 parallel hybrid.

The tractive effort required by the speed trace is propagated through the
wheels, final drive and gearbox to a torque demand at the gearbox input. The
torque-split factor ``alpha`` then assigns ``alpha * T_d`` to the engine and
the remainder to the e-machine (``alpha > 1`` charges the battery). The
e-machine's electrical power drives an equivalent-circuit battery.

Every function is vectorised over numpy broadcasting, and limit violations
are returned as ``feasible == False`` rather than raised, so the DP solver can
scan whole control grids at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from hevdp.maps import GridMap
from hevdp.state import Control, State

RPM = np.pi / 30.0
FUEL_DENSITY_G_PER_L = 745.0


class Mode(IntEnum):
    PURE_ELECTRIC = 0
    PURE_THERMAL = 1
    POWER_SPLIT = 2
    BATTERY_CHARGING = 3
    REGEN = 4
    STANDSTILL = 5

    @property
    def label(self) -> str:
        return _MODE_LABELS[self]


_MODE_LABELS = {
    Mode.PURE_ELECTRIC: "PureElectric",
    Mode.PURE_THERMAL: "PureThermal",
    Mode.POWER_SPLIT: "PowerSplit",
    Mode.BATTERY_CHARGING: "BatteryCharging",
    Mode.REGEN: "Regen",
    Mode.STANDSTILL: "Standstill",
}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleConfig:
    mass: float = 1300.0
    k0: float = 150.0
    k1: float = 2.24
    k2: float = 0.44
    wheel_radius: float = 0.327
    final_drive: float = 4.0
    gear_ratios: tuple = (3.46, 1.844, 1.258, 1.027, 0.85)
    gear_efficiencies: tuple = (0.93, 0.94, 0.947, 0.948, 0.946)
    coupler_ratio: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gear_ratios", tuple(float(g) for g in self.gear_ratios))
        object.__setattr__(self, "gear_efficiencies", tuple(float(e) for e in self.gear_efficiencies))
        if not self.mass > 0:
            raise ModelError("mass must be positive")
        if not self.wheel_radius > 0:
            raise ModelError("wheel_radius must be positive")
        if not (self.final_drive > 0 and self.coupler_ratio > 0):
            raise ModelError("final_drive and coupler_ratio must be positive")
        ratios = np.array(self.gear_ratios)
        if ratios.size == 0 or np.any(ratios <= 0):
            raise ModelError("gear_ratios must be positive")
        if np.any(np.diff(ratios) >= 0):
            raise ModelError("gear_ratios must be strictly decreasing with gear number")
        eff = np.array(self.gear_efficiencies)
        if eff.size != ratios.size:
            raise ModelError("one gear efficiency per gear ratio is required")
        if np.any((eff <= 0) | (eff > 1)):
            raise ModelError("gear efficiencies must lie in (0, 1]")

    @property
    def n_gears(self) -> int:
        return len(self.gear_ratios)


@dataclass(frozen=True)
class WillansFuelMap:
    """Affine fuel power model with friction loss ``k_lin*w + k_cub*w**3``.

    Defaults give a 0.8 kW loss at 200 rad/s and about 7.6 kW at the rated
    point of a 52 kW / 85 Nm engine.
    """

    efficiency: float = 0.40
    lhv: float = 42.5e6
    friction_linear: float = 3.0
    friction_cubic: float = 2.5e-5

    def friction_loss(self, speed):
        speed = np.asarray(speed, dtype=float)
        return self.friction_linear * speed + self.friction_cubic * speed**3

    def __call__(self, speed, torque):
        speed = np.asarray(speed, dtype=float)
        return (np.asarray(torque) * speed + self.friction_loss(speed)) / (self.efficiency * self.lhv)


# Full-load curve of the synthetic 0.9 l engine: 85 Nm plateau up to the 52 kW rated point.
_ENGINE_CURVE_RPM = (1000.0, 1500.0, 2000.0, 2500.0, 52000.0 / 85.0 / RPM, 6000.0)
_ENGINE_CURVE_NM = (62.0, 74.0, 82.0, 85.0, 85.0, 52000.0 / (6000.0 * RPM))


@dataclass(frozen=True, eq=False)
class EngineModel:
    """Engine full-load curve and fuel map (kg/s).

    ``fuel_map`` is either a :class:`WillansFuelMap` or a :class:`GridMap`
    already scaled to kg/s. The speed range is the span of the curve.
    """

    curve_speed: tuple = tuple(r * RPM for r in _ENGINE_CURVE_RPM)
    curve_torque: tuple = _ENGINE_CURVE_NM
    fuel_map: object = field(default_factory=WillansFuelMap)

    def __post_init__(self):
        s = np.asarray(self.curve_speed, dtype=float)
        t = np.asarray(self.curve_torque, dtype=float)
        if s.size < 2 or s.shape != t.shape or np.any(np.diff(s) <= 0):
            raise ModelError("engine torque curve needs >= 2 increasing speed breakpoints")
        if np.any(t <= 0):
            raise ModelError("engine torque curve must be positive")

    @property
    def speed_min(self) -> float:
        return float(self.curve_speed[0])

    @property
    def speed_max(self) -> float:
        return float(self.curve_speed[-1])

    def max_torque(self, speed):
        """Full-load torque; zero outside the speed range."""
        return np.interp(speed, self.curve_speed, self.curve_torque, left=0.0, right=0.0)

    def fuel(self, speed, torque):
        return self.fuel_map(speed, torque)


@dataclass(frozen=True)
class LossEfficiencyMap:
    """Efficiency from copper (``k_cu*T**2``) and iron (``k_fe*w**2``) losses.

    At any speed the best efficiency is ``1 / (1 + 2*sqrt(k_cu*k_fe))``,
    reached at ``T = w*sqrt(k_fe/k_cu)``. Defaults give a 0.93 peak at
    ``T = w/4``.
    """

    copper: float = 0.5 * (1 / 0.93 - 1) * 4.0
    iron: float = 0.5 * (1 / 0.93 - 1) / 4.0

    @property
    def peak(self) -> float:
        return 1.0 / (1.0 + 2.0 * np.sqrt(self.copper * self.iron))

    def __call__(self, speed, torque):
        speed = np.asarray(speed, dtype=float)
        torque = np.asarray(torque, dtype=float)
        pm = np.abs(speed * torque)
        loss = self.copper * torque**2 + self.iron * speed**2
        with np.errstate(invalid="ignore", divide="ignore"):
            eta = pm / (pm + loss)
        return np.where(pm > 0, eta, self.peak)


@dataclass(frozen=True, eq=False)
class EMachineModel:
    """Symmetric motor/generator torque limit and efficiency map.

    Without an explicit curve the limit is ``min(peak_torque, rated_power/w)``.
    """

    peak_torque: float = 200.0
    rated_power: float = 30e3
    speed_max: float = 1150.0
    efficiency_map: object = field(default_factory=LossEfficiencyMap)
    curve_speed: Optional[tuple] = None
    curve_torque: Optional[tuple] = None

    def max_torque(self, speed):
        speed = np.asarray(speed, dtype=float)
        if self.curve_speed is not None:
            tmax = np.interp(speed, self.curve_speed, self.curve_torque)
        else:
            with np.errstate(divide="ignore", over="ignore"):
                tmax = np.minimum(self.peak_torque, self.rated_power / np.abs(speed))
        return np.where(np.abs(speed) <= self.speed_max, tmax, 0.0)

    def efficiency(self, speed, torque):
        gm = self.efficiency_map
        if isinstance(gm, GridMap) and gm.torques[0] >= 0:
            torque = np.abs(torque)
        return gm(speed, torque)


@dataclass(frozen=True, eq=False)
class BatteryModel:
    capacity_ah: float = 5.3
    soc_points: tuple = (0.3, 0.8)
    voc_points: tuple = (295.0, 295.0)
    r0_points: tuple = (0.1, 0.1)
    soc_min: float = 0.3
    soc_max: float = 0.8
    power_min: float = -50e3
    power_max: float = 60e3

    def __post_init__(self):
        if not self.capacity_ah > 0:
            raise ModelError("battery capacity must be positive")
        if not self.soc_min < self.soc_max:
            raise ModelError("soc_min must be below soc_max")
        probe = np.linspace(self.soc_min, self.soc_max, 11)
        if np.any(self.voc(probe) <= 0) or np.any(self.r0(probe) <= 0):
            raise ModelError("open-circuit voltage and resistance must be positive over the SOC window")

    def voc(self, soc):
        return np.interp(soc, self.soc_points, self.voc_points)

    def r0(self, soc):
        return np.interp(soc, self.soc_points, self.r0_points)


@dataclass(frozen=True, eq=False)
class Models:
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    engine: EngineModel = field(default_factory=EngineModel)
    emachine: EMachineModel = field(default_factory=EMachineModel)
    battery: BatteryModel = field(default_factory=BatteryModel)


def default_models() -> Models:
    return Models()


# --- elementary relations ---------------------------------------------------


def tractive_force(v, a, cfg: VehicleConfig):
    """Road load plus inertia; road load vanishes at standstill."""
    v = np.asarray(v, dtype=float)
    road = np.where(v > 0, cfg.k0 + cfg.k1 * v + cfg.k2 * v**2, 0.0)
    return road + cfg.mass * np.asarray(a, dtype=float)


def torque_demand(force, v, gear, cfg: VehicleConfig):
    """Torque demand and speed at the gearbox input for 1-based ``gear``.

    Gearbox losses are divided out in traction and multiplied in when the
    wheels drive the shaft.
    """
    idx = np.asarray(gear, dtype=int) - 1
    ratio = np.asarray(cfg.gear_ratios)[idx]
    eff = np.asarray(cfg.gear_efficiencies)[idx]
    force = np.asarray(force, dtype=float)
    overall = cfg.final_drive * ratio
    t_wheel_side = force * cfg.wheel_radius / overall
    t_d = np.where(force > 0, t_wheel_side / eff, t_wheel_side * eff)
    omega = np.asarray(v, dtype=float) / cfg.wheel_radius * overall
    return t_d, omega


def split_torque(t_d, alpha, cfg: VehicleConfig):
    """Engine torque and e-machine shaft torque for torque-split factor ``alpha``."""
    t_d = np.asarray(t_d, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return alpha * t_d, (1.0 - alpha) * t_d / cfg.coupler_ratio


def engine_fuel_rate(speed, torque, eng: EngineModel, on=True):
    """Fuel rate in kg/s, NaN where the operating point is outside the engine envelope."""
    speed = np.asarray(speed, dtype=float)
    torque = np.asarray(torque, dtype=float)
    inside = (speed >= eng.speed_min) & (speed <= eng.speed_max) & (torque >= 0)
    inside &= torque <= eng.max_torque(speed)
    rate = np.where(inside, eng.fuel(speed, torque), np.nan)
    return np.where(on, rate, 0.0)


def em_electrical_power(speed, torque, em: EMachineModel):
    """Electrical power in W (positive drawn from the battery); NaN outside the limits."""
    speed = np.asarray(speed, dtype=float)
    torque = np.asarray(torque, dtype=float)
    pm = torque * speed
    eta = em.efficiency(speed, torque)
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(pm >= 0, pm / eta, pm * eta)
    ok = (np.abs(speed) <= em.speed_max) & (np.abs(torque) <= em.max_torque(speed))
    return np.where(ok, pe, np.nan)


def battery_current(p_b, soc, bat: BatteryModel):
    """Discharge-positive current solving ``(voc - R0*i)*i = P_b``; NaN if infeasible."""
    p_b = np.asarray(p_b, dtype=float)
    voc, r0 = bat.voc(soc), bat.r0(soc)
    disc = voc * voc - 4.0 * r0 * p_b
    ok = (disc >= 0) & (p_b >= bat.power_min) & (p_b <= bat.power_max)
    # 2P/(voc + sqrt(disc)) is the small root without cancellation near P = 0
    i_b = 2.0 * p_b / (voc + np.sqrt(np.maximum(disc, 0.0)))
    return np.where(ok, i_b, np.nan)


def soc_next(soc, i_b, dt, bat: BatteryModel):
    """Coulomb counting. Values outside the SOC window are returned as NaN."""
    nxt = np.asarray(soc, dtype=float) - np.asarray(i_b) * dt / (3600.0 * bat.capacity_ah)
    return np.where((nxt >= bat.soc_min) & (nxt <= bat.soc_max), nxt, np.nan)


def classify_mode(alpha, t_d, v):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ModelError("torque-split factor must be non-negative")
    t_d = np.asarray(t_d, dtype=float)
    v = np.asarray(v, dtype=float)
    mode = np.select(
        [(v == 0) & (t_d <= 0), t_d < 0, alpha == 0, alpha == 1, alpha < 1],
        [Mode.STANDSTILL, Mode.REGEN, Mode.PURE_ELECTRIC, Mode.PURE_THERMAL, Mode.POWER_SPLIT],
        default=Mode.BATTERY_CHARGING,
    )
    return mode.astype(np.int8)


def torque_utilization(t_eng, t_em, omega_in, cfg: VehicleConfig, eng: EngineModel, em: EMachineModel):
    """Used over available powertrain torque at the gearbox input.

    Generator torque is not counted as used torque. NaN when no torque is
    available at this speed.
    """
    tc = cfg.coupler_ratio
    used = np.asarray(t_eng, dtype=float) + np.maximum(np.asarray(t_em) * tc, 0.0)
    avail = eng.max_torque(omega_in) + em.max_torque(np.asarray(omega_in) * tc) * tc
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(avail > 0, used / avail, np.nan)


# --- full stage -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StageResult:
    """Outcome of one time step; all fields broadcast against each other."""

    feasible: np.ndarray
    T_d: np.ndarray
    omega_in: np.ndarray
    T_eng: np.ndarray
    T_em: np.ndarray
    T_brake: np.ndarray
    fuel_rate: np.ndarray
    P_b: np.ndarray
    i_b: np.ndarray
    soc_next: np.ndarray
    engine_on: np.ndarray
    mode: np.ndarray
    utilization: np.ndarray
    traction: np.ndarray  # T_d > 0 and v > 0: the torque-reserve penalty applies


@dataclass(frozen=True, eq=False)
class DriveResult:
    """SOC-independent part of a stage."""

    T_d: np.ndarray
    omega_in: np.ndarray
    T_eng: np.ndarray
    T_em: np.ndarray
    T_brake: np.ndarray
    fuel_rate: np.ndarray
    P_b: np.ndarray
    engine_on: np.ndarray
    mode: np.ndarray
    utilization: np.ndarray
    traction: np.ndarray
    braking: np.ndarray
    feasible: np.ndarray


def drivetrain(alpha, gear, v: float, a: float, models: Models) -> DriveResult:
    veh, eng, em = models.vehicle, models.engine, models.emachine
    alpha = np.asarray(alpha, dtype=float)
    force = tractive_force(v, a, veh)
    t_d, omega_in = torque_demand(force, v, gear, veh)
    t_d, omega_in, alpha = np.broadcast_arrays(t_d, omega_in, alpha)

    traction = t_d > 0
    braking = t_d < 0
    alpha_eff = np.where(traction, alpha, 0.0)
    t_eng, t_em = split_torque(np.where(traction, t_d, 0.0), alpha_eff, veh)
    omega_em = omega_in * veh.coupler_ratio
    em_limit = em.max_torque(omega_em)

    regen_em = np.maximum(t_d / veh.coupler_ratio, -em_limit)
    t_em = np.where(braking, regen_em, t_em)
    t_brake = np.where(braking, t_d - t_em * veh.coupler_ratio, 0.0)

    engine_on = t_eng > 0
    fuel = engine_fuel_rate(omega_in, t_eng, eng, on=engine_on)
    p_b = em_electrical_power(omega_em, t_em, em)

    moving_traction = traction & (v > 0)
    util = torque_utilization(t_eng, t_em, omega_in, veh, eng, em)
    util = np.where(moving_traction, util, 0.0)

    feasible = (alpha >= 0) & np.isfinite(fuel) & np.isfinite(p_b) & np.isfinite(util)
    mode = classify_mode(np.maximum(alpha_eff, 0.0), t_d, np.full(t_d.shape, float(v)))
    return DriveResult(
        T_d=t_d, omega_in=omega_in, T_eng=t_eng, T_em=t_em, T_brake=t_brake,
        fuel_rate=np.where(feasible, fuel, 0.0), P_b=p_b, engine_on=engine_on,
        mode=mode, utilization=util, traction=traction, braking=braking, feasible=feasible,
    )


def battery_step(drive: DriveResult, soc, dt: float, models: Models):
    """Battery current and next SOC for a drivetrain result at ``soc``.

    A braking step that would overcharge the battery falls back to friction
    braking only.
    Returns ``(feasible, P_b, i_b, soc_next, T_em, T_brake)``.
    """
    bat = models.battery
    soc = np.asarray(soc, dtype=float)
    p_b = np.where(drive.feasible, drive.P_b, 0.0)
    i_b = battery_current(p_b, soc, bat)
    nxt = soc - i_b * dt / (3600.0 * bat.capacity_ah)
    over = drive.braking & ~(nxt <= bat.soc_max)
    if np.any(over):
        p_b = np.where(over, 0.0, p_b)
        i_b = np.where(over, 0.0, i_b)
        nxt = np.where(over, soc, nxt)
        t_em = np.where(over, 0.0, drive.T_em)
        t_brake = np.where(over, drive.T_d, drive.T_brake)
    else:
        t_em, t_brake = drive.T_em, drive.T_brake
    ok = drive.feasible & np.isfinite(i_b) & (nxt >= bat.soc_min) & (nxt <= bat.soc_max)
    return ok, p_b, i_b, nxt, t_em, t_brake


def evaluate_stage(x: State, u: Control, w, models: Models, dt: float = 1.0) -> StageResult:
    """Evaluate one time step for state ``x``, control ``u`` and exogenous ``w = (v, a)``.

    Infeasible combinations are flagged in ``feasible``; their numeric fields
    are not meaningful.
    """
    v, a = (float(z) for z in w)
    drive = drivetrain(u.alpha, u.gear, v, a, models)
    ok, p_b, i_b, nxt, t_em, t_brake = battery_step(drive, x.soc, dt, models)
    shape = np.broadcast_shapes(np.shape(ok), np.shape(drive.T_d))
    b = lambda arr: np.broadcast_to(arr, shape)  # noqa: E731
    return StageResult(
        feasible=b(ok), T_d=b(drive.T_d), omega_in=b(drive.omega_in), T_eng=b(drive.T_eng),
        T_em=b(t_em), T_brake=b(t_brake), fuel_rate=b(drive.fuel_rate), P_b=b(p_b),
        i_b=b(i_b), soc_next=b(nxt), engine_on=b(drive.engine_on), mode=b(drive.mode),
        utilization=b(drive.utilization), traction=b(drive.traction & (v > 0)),
    )
