"""Run configuration, vehicle data files and model assembly."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from hevdp.cost import PenaltyWeights
from hevdp.cycleio import DriveCycle, compose, resolve_cycle
from hevdp.dpcore import Grids, Problem, TerminalSpec
from hevdp.maps import read_battery_curves, read_grid_map
from hevdp.powertrain import (
    RPM,
    BatteryModel,
    EMachineModel,
    EngineModel,
    LossEfficiencyMap,
    Models,
    VehicleConfig,
    WillansFuelMap,
)
from hevdp.state import State

SYNTHETIC = "synthetic"
DEFAULT = "default"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _default_vehicle_text() -> str:
    return resources.files("hevdp").joinpath("data/vehicle_default.yaml").read_text(encoding="utf-8")


def _get(section: dict, key: str, where: str, kind=float, default: Any = ...):
    if key not in section:
        if default is ...:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    value = section[key]
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is list:
            return [float(v) for v in value]
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}", f"expected {kind.__name__}, got {value!r}") from None


def models_from_vehicle_data(data: dict) -> Models:
    """Build component models from a parsed vehicle file."""
    try:
        veh, tr, eng, em, bat = (data[k] for k in ("vehicle", "transmission", "engine", "emachine", "battery"))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), "section missing from vehicle file") from None
    try:
        vehicle = VehicleConfig(
            mass=_get(veh, "mass_kg", "vehicle"),
            k0=_get(veh, "coastdown_k0_N", "vehicle"),
            k1=_get(veh, "coastdown_k1_N_per_mps", "vehicle"),
            k2=_get(veh, "coastdown_k2_N_per_mps2", "vehicle"),
            wheel_radius=_get(veh, "tyre_radius_m", "vehicle"),
            final_drive=_get(tr, "final_drive_ratio", "transmission", default=4.0),
            gear_ratios=tuple(_get(tr, "gear_ratios", "transmission", list)),
            gear_efficiencies=tuple(_get(tr, "efficiency", "transmission", list)),
            coupler_ratio=_get(tr, "coupler_ratio", "transmission", default=1.0),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("vehicle", str(exc)) from None

    rated = _get(eng, "rated_power_kW", "engine") * 1e3
    tmax = _get(eng, "max_torque_Nm", "engine")
    n_min = _get(eng, "min_speed_rpm", "engine", default=1000.0)
    n_max = _get(eng, "max_speed_rpm", "engine", default=6000.0)
    n_rated = rated / tmax / RPM
    if not n_min < 2500.0 < n_rated <= n_max:
        raise ConfigError("engine", "need min_speed_rpm < 2500 < rated speed <= max_speed_rpm")
    shape = np.array([62.0, 74.0, 82.0, 85.0]) / 85.0
    curve_rpm = [n_min, *np.interp([1500.0, 2000.0], [1000.0, 2500.0], [n_min, 2500.0]), 2500.0, n_rated]
    curve_nm = [*(shape * tmax), tmax]
    if n_max > n_rated:
        curve_rpm.append(n_max)
        curve_nm.append(rated / (n_max * RPM))
    willans = WillansFuelMap(
        efficiency=_get(eng, "willans_efficiency", "engine", default=0.40),
        lhv=_get(eng, "lhv_MJ_per_kg", "engine", default=42.5) * 1e6,
        friction_linear=_get(eng, "friction_linear_W_per_radps", "engine", default=3.0),
        friction_cubic=_get(eng, "friction_cubic_W_per_radps3", "engine", default=2.5e-5),
    )
    engine = EngineModel(tuple(r * RPM for r in curve_rpm), tuple(curve_nm), willans)

    peak = _get(em, "peak_efficiency", "emachine", default=0.93)
    if not 0 < peak < 1:
        raise ConfigError("emachine.peak_efficiency", "must lie in (0, 1)")
    c = 0.5 * (1.0 / peak - 1.0)
    emachine = EMachineModel(
        peak_torque=_get(em, "max_torque_Nm", "emachine"),
        rated_power=_get(em, "rated_power_kW", "emachine") * 1e3,
        speed_max=_get(em, "max_speed_radps", "emachine", default=1150.0),
        efficiency_map=LossEfficiencyMap(copper=4.0 * c, iron=c / 4.0),
    )
    smin = _get(bat, "soc_min", "battery", default=0.3)
    smax = _get(bat, "soc_max", "battery", default=0.8)
    voc = _get(bat, "nominal_voltage_V", "battery")
    r0 = _get(bat, "internal_resistance_ohm", "battery", default=0.1)
    try:
        battery = BatteryModel(
            capacity_ah=_get(bat, "nominal_capacity_Ah", "battery"),
            soc_points=(smin, smax), voc_points=(voc, voc), r0_points=(r0, r0),
            soc_min=smin, soc_max=smax,
            power_min=_get(bat, "power_min_kW", "battery", default=-50.0) * 1e3,
            power_max=_get(bat, "power_max_kW", "battery", default=60.0) * 1e3,
        )
    except ValueError as exc:
        raise ConfigError("battery", str(exc)) from None
    return Models(vehicle, engine, emachine, battery)


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


@dataclass
class RunConfig:
    vehicle: str = DEFAULT
    engine_map: str = SYNTHETIC
    emachine_map: str = SYNTHETIC
    battery_curves: str = SYNTHETIC
    cycles: list = field(default_factory=lambda: ["builtin:mixed30"])
    timestep: float = 1.0
    soc_min: float = 0.3
    soc_max: float = 0.8
    soc_nodes: int = 201
    alpha_max: float = 2.0
    alpha_nodes: int = 41
    phi_gamma_g: float = 0.0
    phi_epsilon_g: float = 0.0
    phi_tres_g: float = 0.0
    terminal: str = "charge_sustaining"
    soc_target: Any = None
    terminal_weight_g: float = 0.0
    soc0: float = 0.55
    gear0: int = 1
    engine0: int = 0
    label: Any = None
    dump_policy: bool = False
    base_dir: str = field(default=".", repr=False, compare=False)

    # -- (de)serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vehicle": self.vehicle,
            "maps": {"engine": self.engine_map, "emachine": self.emachine_map, "battery": self.battery_curves},
            "cycles": list(self.cycles),
            "timestep": self.timestep,
            "grids": {
                "soc_min": self.soc_min, "soc_max": self.soc_max, "soc_nodes": self.soc_nodes,
                "alpha_max": self.alpha_max, "alpha_nodes": self.alpha_nodes,
            },
            "weights": {
                "phi_gamma_g": self.phi_gamma_g, "phi_epsilon_g": self.phi_epsilon_g, "phi_tres_g": self.phi_tres_g,
            },
            "terminal": {"kind": self.terminal, "soc_target": self.soc_target, "weight_g": self.terminal_weight_g},
            "initial": {"soc": self.soc0, "gear": self.gear0, "engine": self.engine0},
            "label": self.label,
            "dump_policy": self.dump_policy,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        known = {"vehicle", "maps", "cycles", "timestep", "grids", "weights", "terminal", "initial", "label", "dump_policy"}
        for key in d:
            if key not in known:
                raise ConfigError(str(key), "unknown key")
        cfg = cls(base_dir=base_dir)
        cfg.vehicle = str(d.get("vehicle", DEFAULT))
        maps = d.get("maps") or {}
        cfg.engine_map = str(maps.get("engine", SYNTHETIC))
        cfg.emachine_map = str(maps.get("emachine", SYNTHETIC))
        cfg.battery_curves = str(maps.get("battery", SYNTHETIC))
        cycles = d.get("cycles", cfg.cycles)
        if isinstance(cycles, str):
            cycles = [cycles]
        if not isinstance(cycles, list) or not cycles:
            raise ConfigError("cycles", "need a non-empty list of cycle files or builtin:<name>")
        cfg.cycles = [str(c) for c in cycles]
        cfg.timestep = _get(d, "timestep", "<root>", default=1.0)
        g = d.get("grids") or {}
        cfg.soc_min = _get(g, "soc_min", "grids", default=cfg.soc_min)
        cfg.soc_max = _get(g, "soc_max", "grids", default=cfg.soc_max)
        cfg.soc_nodes = _get(g, "soc_nodes", "grids", int, default=cfg.soc_nodes)
        cfg.alpha_max = _get(g, "alpha_max", "grids", default=cfg.alpha_max)
        cfg.alpha_nodes = _get(g, "alpha_nodes", "grids", int, default=cfg.alpha_nodes)
        w = d.get("weights") or {}
        for key in w:
            if key not in ("phi_gamma_g", "phi_epsilon_g", "phi_tres_g"):
                raise ConfigError(f"weights.{key}", "unknown weight")
        cfg.phi_gamma_g = _get(w, "phi_gamma_g", "weights", default=0.0)
        cfg.phi_epsilon_g = _get(w, "phi_epsilon_g", "weights", default=0.0)
        cfg.phi_tres_g = _get(w, "phi_tres_g", "weights", default=0.0)
        t = d.get("terminal") or {}
        cfg.terminal = str(t.get("kind", cfg.terminal))
        st = t.get("soc_target")
        cfg.soc_target = None if st is None else _get(t, "soc_target", "terminal")
        cfg.terminal_weight_g = _get(t, "weight_g", "terminal", default=0.0)
        i = d.get("initial") or {}
        cfg.soc0 = _get(i, "soc", "initial", default=cfg.soc0)
        cfg.gear0 = _get(i, "gear", "initial", int, default=cfg.gear0)
        cfg.engine0 = _get(i, "engine", "initial", int, default=cfg.engine0)
        cfg.label = d.get("label")
        cfg.dump_policy = bool(d.get("dump_policy", False))
        cfg.check()
        return cfg

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def loads(cls, text: str, base_dir: str = ".") -> "RunConfig":
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"not valid YAML: {exc}") from None
        return cls.from_dict(data, base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"), str(path.parent))

    # -- validation and assembly ---------------------------------------------

    def check(self) -> None:
        if not self.timestep > 0:
            raise ConfigError("timestep", "must be positive")
        if not self.soc_min < self.soc_max:
            raise ConfigError("grids.soc_min", "must be below grids.soc_max")
        if self.soc_nodes < 2:
            raise ConfigError("grids.soc_nodes", "need at least 2 nodes")
        if not self.alpha_max >= 1.0:
            raise ConfigError("grids.alpha_max", "must be >= 1 so that pure thermal mode is available")
        if self.alpha_nodes < 2:
            raise ConfigError("grids.alpha_nodes", "need at least 2 nodes")
        for name in ("phi_gamma_g", "phi_epsilon_g", "phi_tres_g"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"weights.{name}", "must be non-negative")
        if self.terminal not in ("charge_sustaining", "linear", "free"):
            raise ConfigError("terminal.kind", "must be charge_sustaining, linear or free")
        if not self.soc_min <= self.soc0 <= self.soc_max:
            raise ConfigError("initial.soc", "must lie within the SOC grid")
        if self.engine0 not in (0, 1):
            raise ConfigError("initial.engine", "must be 0 or 1")

    def resolve_path(self, ref: str) -> str:
        p = Path(ref)
        return str(p if p.is_absolute() else Path(self.base_dir) / p)

    def _cycle_refs(self) -> list[str]:
        return [c if c.startswith("builtin:") else self.resolve_path(c) for c in self.cycles]

    def check_files(self) -> None:
        refs = [("vehicle", self.vehicle, DEFAULT), ("maps.engine", self.engine_map, SYNTHETIC),
                ("maps.emachine", self.emachine_map, SYNTHETIC), ("maps.battery", self.battery_curves, SYNTHETIC)]
        for name, ref, sentinel in refs:
            if ref != sentinel and not Path(self.resolve_path(ref)).is_file():
                raise ConfigError(name, f"file not found: {self.resolve_path(ref)}")
        for ref in self._cycle_refs():
            if not ref.startswith("builtin:") and not Path(ref).is_file():
                raise ConfigError("cycles", f"file not found: {ref}")

    def build_models(self) -> Models:
        if self.vehicle == DEFAULT:
            data = yaml.safe_load(_default_vehicle_text())
        else:
            data = yaml.safe_load(Path(self.resolve_path(self.vehicle)).read_text(encoding="utf-8"))
        models = models_from_vehicle_data(data)
        engine, em, bat = models.engine, models.emachine, models.battery
        try:
            if self.engine_map != SYNTHETIC:
                fuel = read_grid_map(self.resolve_path(self.engine_map), scale=1e-3)  # g/s -> kg/s
                engine = EngineModel(engine.curve_speed, engine.curve_torque, fuel)
            if self.emachine_map != SYNTHETIC:
                eff = read_grid_map(self.resolve_path(self.emachine_map))
                em = EMachineModel(em.peak_torque, em.rated_power, em.speed_max, eff)
            if self.battery_curves != SYNTHETIC:
                soc, voc, r0 = read_battery_curves(self.resolve_path(self.battery_curves))
                bat = BatteryModel(bat.capacity_ah, tuple(soc), tuple(voc), tuple(r0),
                                   bat.soc_min, bat.soc_max, bat.power_min, bat.power_max)
        except ValueError as exc:
            raise ConfigError("maps", str(exc)) from None
        return Models(models.vehicle, engine, em, bat)

    def build_cycle(self) -> DriveCycle:
        try:
            return compose([resolve_cycle(ref, self.timestep) for ref in self._cycle_refs()])
        except ValueError as exc:
            raise ConfigError("cycles", str(exc)) from None

    def build_problem(self) -> Problem:
        self.check_files()
        models = self.build_models()
        if self.soc_min < models.battery.soc_min or self.soc_max > models.battery.soc_max:
            raise ConfigError("grids", "SOC grid extends beyond the battery window")
        n_g = models.vehicle.n_gears
        if not 1 <= self.gear0 <= n_g:
            raise ConfigError("initial.gear", f"must be in 1..{n_g}")
        alpha = np.linspace(0.0, self.alpha_max, self.alpha_nodes)
        if not np.any(alpha == 1.0):
            raise ConfigError("grids.alpha_nodes", f"alpha grid over [0, {self.alpha_max}] with "
                              f"{self.alpha_nodes} nodes does not contain 1")
        grids = Grids(np.linspace(self.soc_min, self.soc_max, self.soc_nodes), alpha, n_g)
        cycle = self.build_cycle()
        weights = PenaltyWeights(self.phi_gamma_g, self.phi_epsilon_g, self.phi_tres_g, cycle.timestep)
        terminal = TerminalSpec(self.terminal, self.soc_target, self.terminal_weight_g)
        return Problem(cycle, models, weights, grids, terminal, State(self.soc0, self.gear0, self.engine0))

    # -- identity ----------------------------------------------------------------

    def fingerprint(self) -> dict:
        """Config content plus digests of every referenced file."""
        d = copy.deepcopy(self.to_dict())
        d.pop("label")
        d.pop("dump_policy")
        files = {}
        for ref in [self.vehicle, self.engine_map, self.emachine_map, self.battery_curves, *self.cycles]:
            if ref in (DEFAULT, SYNTHETIC) or ref.startswith("builtin:"):
                continue
            path = self.resolve_path(ref)
            if Path(path).is_file():
                files[ref] = _file_digest(path)
        d["file_digests"] = files
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.fingerprint(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def grid_hash(self) -> str:
        blob = json.dumps(self.to_dict()["grids"], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def strategy_label(self) -> str:
        if self.label:
            return str(self.label)
        active = [n for n, v in (("gamma", self.phi_gamma_g), ("epsilon", self.phi_epsilon_g),
                                 ("tres", self.phi_tres_g)) if v > 0]
        return {
            (): "fuel-optimal",
            ("gamma",): "gear shift-penalty",
            ("epsilon",): "engine start penalty",
            ("tres",): "torque reserve penalty",
        }.get(tuple(active), "combined penalties")
