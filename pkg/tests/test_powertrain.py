import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevdp.maps import GridMap
from hevdp.powertrain import (
    BatteryModel,
    EMachineModel,
    EngineModel,
    LossEfficiencyMap,
    Mode,
    ModelError,
    Models,
    VehicleConfig,
    WillansFuelMap,
    battery_current,
    classify_mode,
    em_electrical_power,
    engine_fuel_rate,
    evaluate_stage,
    soc_next,
    split_torque,
    torque_demand,
    torque_utilization,
    tractive_force,
)
from hevdp.state import Control, State

CFG = VehicleConfig()
# frozen hand evaluations of the longitudinal and gearbox relations
F_CRUISE = 216.4
T_D_GEAR3 = 14.849587770266075
OMEGA_GEAR3 = 153.88379204892968
T_D_REGEN_GEAR3 = -13.317243958664546


@dataclass(frozen=True)
class ConstEfficiency:
    eta: float

    def __call__(self, speed, torque):
        return np.full(np.broadcast(np.asarray(speed), np.asarray(torque)).shape, self.eta)


def test_tractive_force_examples():
    assert tractive_force(0.0, 0.0, CFG) == 0.0
    assert float(tractive_force(10.0, 0.0, CFG)) == pytest.approx(216.4, rel=1e-12)
    assert float(tractive_force(10.0, 1.0, CFG)) == pytest.approx(1516.4, rel=1e-12)
    # braking at standstill still sees the inertia term only
    assert float(tractive_force(0.0, -1.0, CFG)) == pytest.approx(-1300.0)


def test_torque_demand_examples():
    t_d, w = torque_demand(F_CRUISE, 10.0, 3, CFG)
    assert float(t_d) == pytest.approx(T_D_GEAR3, rel=1e-12)
    assert f"{float(t_d):.4g}" == "14.85"
    assert float(w) == pytest.approx(OMEGA_GEAR3, rel=1e-12)
    t_r, _ = torque_demand(-F_CRUISE, 10.0, 3, CFG)
    assert float(t_r) == pytest.approx(T_D_REGEN_GEAR3, rel=1e-12)
    for g in range(1, 6):
        assert float(torque_demand(0.0, 10.0, g, CFG)[0]) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.integers(1, 5))
def test_gear_ratio_consistency(v, g):
    _, w = torque_demand(100.0, v, g, CFG)
    expected = (v / CFG.wheel_radius) * CFG.final_drive * CFG.gear_ratios[g - 1]
    assert float(w) == expected


def test_split_examples():
    assert np.allclose(split_torque(14.85, 1.0, CFG), (14.85, 0.0))
    np.testing.assert_allclose(split_torque(14.85, 0.6, CFG), (8.91, 5.94), rtol=1e-12)
    np.testing.assert_allclose(split_torque(14.85, 1.4, CFG), (20.79, -5.94), rtol=1e-12)
    cfg2 = VehicleConfig(coupler_ratio=2.0)
    np.testing.assert_allclose(split_torque(10.0, 0.5, cfg2), (5.0, 2.5))


def test_engine_fuel_examples():
    eng = EngineModel()
    assert float(engine_fuel_rate(200.0, 50.0, eng, on=False)) == 0.0
    assert float(engine_fuel_rate(200.0, 50.0, eng)) == pytest.approx(6.352941176470589e-4, rel=1e-12)
    assert float(WillansFuelMap().friction_loss(200.0)) == pytest.approx(800.0)
    assert math.isnan(float(engine_fuel_rate(400.0, 90.0, eng)))
    assert math.isnan(float(engine_fuel_rate(50.0, 10.0, eng)))  # below idle speed
    assert float(eng.max_torque(400.0)) == pytest.approx(85.0)
    # rated point of the full-load curve
    assert eng.speed_max * float(eng.max_torque(eng.speed_max)) == pytest.approx(52e3)


def test_engine_grid_map():
    speeds = np.array([100.0, 300.0, 700.0])
    torques = np.array([0.0, 50.0, 100.0])
    values = np.outer(torques + 10.0, speeds) * 1e-7
    eng = EngineModel(curve_speed=(100.0, 700.0), curve_torque=(90.0, 90.0), fuel_map=GridMap(speeds, torques, values))
    assert float(engine_fuel_rate(200.0, 25.0, eng)) == pytest.approx((np.interp(200, speeds, [1, 3, 7]) * 35) * 1e-5)


def test_em_power_examples():
    em = EMachineModel(efficiency_map=ConstEfficiency(0.9))
    assert float(em_electrical_power(100.0, 0.0, em)) == 0.0
    assert float(em_electrical_power(100.0, 50.0, em)) == pytest.approx(5555.555555555556, rel=1e-12)
    assert float(em_electrical_power(100.0, -50.0, em)) == pytest.approx(-4500.0, rel=1e-12)
    assert math.isnan(float(em_electrical_power(100.0, 250.0, em)))
    assert math.isnan(float(em_electrical_power(1200.0, 1.0, em)))


def test_em_default_limits_and_efficiency():
    em = EMachineModel()
    assert float(em.max_torque(100.0)) == 200.0
    assert float(em.max_torque(300.0)) == pytest.approx(100.0)
    eff = LossEfficiencyMap()
    assert eff.peak == pytest.approx(0.93)
    assert float(eff(400.0, 100.0)) == pytest.approx(0.93)
    assert float(eff(400.0, 20.0)) < 0.93


def test_battery_current_examples():
    bat = BatteryModel()
    assert float(battery_current(0.0, 0.55, bat)) == 0.0
    i = float(battery_current(2950.0, 0.55, bat))
    assert i == pytest.approx(10.0341300903969, rel=1e-12)
    assert (295.0 - 0.1 * i) * i == pytest.approx(2950.0, rel=1e-12)
    wide = BatteryModel(power_min=-1e6, power_max=1e6)
    assert math.isnan(float(battery_current(250e3, 0.55, wide)))
    assert np.isfinite(float(battery_current(217e3, 0.55, wide)))
    assert math.isnan(float(battery_current(61e3, 0.55, bat)))


def test_soc_next_examples():
    bat = BatteryModel()
    assert float(soc_next(0.6, 0.0, 1.0, bat)) == 0.6
    assert float(soc_next(0.6, 19.08, 1.0, bat)) == pytest.approx(0.599, rel=1e-12)
    assert math.isnan(float(soc_next(0.3001, 100.0, 10.0, bat)))


def test_classify_mode_examples():
    assert classify_mode(0.0, 14.85, 10.0) == Mode.PURE_ELECTRIC
    assert classify_mode(1.4, 14.85, 10.0) == Mode.BATTERY_CHARGING
    assert classify_mode(0.6, -13.3, 10.0) == Mode.REGEN
    assert classify_mode(1.0, 14.85, 10.0) == Mode.PURE_THERMAL
    assert classify_mode(0.5, 14.85, 10.0) == Mode.POWER_SPLIT
    assert classify_mode(0.0, 0.0, 0.0) == Mode.STANDSTILL
    with pytest.raises(ModelError):
        classify_mode(-0.1, 1.0, 1.0)
    assert Mode.POWER_SPLIT.label == "PowerSplit"


def test_torque_utilization_examples():
    em = EMachineModel(rated_power=100e3)  # 200 Nm available up to 500 rad/s
    eng = EngineModel()
    assert float(torque_utilization(85.0, 200.0, 300.0, CFG, eng, em)) == pytest.approx(1.0)
    assert float(torque_utilization(42.5, -50.0, 300.0, CFG, eng, em)) == pytest.approx(0.14912280701754385)
    assert float(torque_utilization(0.0, 0.0, 300.0, CFG, eng, em)) == 0.0


def test_stage_standstill(models):
    s = evaluate_stage(State(0.55), Control(0.0, 1), (0.0, 0.0), models)
    assert bool(s.feasible)
    assert float(s.T_eng) == float(s.T_em) == float(s.fuel_rate) == 0.0
    assert float(s.soc_next) == 0.55
    assert s.mode == Mode.STANDSTILL


def test_stage_em_limit_infeasible(models):
    # 3 m/s^2 at 20 m/s in top gear needs far more than 200 Nm electric
    s = evaluate_stage(State(0.55), Control(0.0, 5), (20.0, 3.0), models)
    assert not bool(s.feasible)


def test_stage_regen_split(models):
    # level decel giving F = -216.4 N at 10 m/s
    a = (-216.4 - 216.4) / 1300.0
    s = evaluate_stage(State(0.55), Control(0.7, 3), (10.0, a), models)
    assert bool(s.feasible)
    assert float(s.T_d) == pytest.approx(T_D_REGEN_GEAR3, rel=1e-9)
    assert float(s.T_em) == pytest.approx(float(s.T_d))
    assert float(s.T_brake) == pytest.approx(0.0, abs=1e-12)
    assert float(s.P_b) < 0 and s.mode == Mode.REGEN
    assert float(s.T_eng) == 0.0


def test_stage_hard_braking_uses_friction(models):
    s = evaluate_stage(State(0.55), Control(0.0, 1), (10.0, -8.0), models)
    assert bool(s.feasible)
    # generator saturates at the power-limited torque at this shaft speed
    assert float(s.T_em) == pytest.approx(-float(models.emachine.max_torque(s.omega_in)))
    assert float(s.T_brake) < 0
    assert float(s.T_em) + float(s.T_brake) == pytest.approx(float(s.T_d))


def test_regen_at_full_battery_falls_back_to_friction(models):
    s = evaluate_stage(State(0.8), Control(0.0, 3), (10.0, -1.0), models)
    assert bool(s.feasible)
    assert float(s.T_em) == 0.0 and float(s.P_b) == 0.0
    assert float(s.T_brake) == pytest.approx(float(s.T_d))
    assert float(s.soc_next) == 0.8


def test_vehicle_config_validation():
    with pytest.raises(ModelError):
        VehicleConfig(gear_ratios=(1.0, 2.0), gear_efficiencies=(0.9, 0.9))
    with pytest.raises(ModelError):
        VehicleConfig(mass=0)
    with pytest.raises(ModelError):
        BatteryModel(soc_min=0.8, soc_max=0.3)


stage_inputs = st.tuples(
    st.floats(0.3, 0.8), st.floats(0.0, 2.0), st.integers(1, 5), st.floats(0.0, 40.0), st.floats(-3.0, 3.0)
)


@settings(max_examples=300, deadline=None)
@given(stage_inputs)
def test_stage_invariants(args):
    soc, alpha, gear, v, a = args
    models = Models()
    s = evaluate_stage(State(soc), Control(alpha, gear), (v, a), models)
    if not bool(s.feasible):
        return
    assert 0.0 <= float(s.utilization) <= 1.0 + 1e-12
    p, i = float(s.P_b), float(s.i_b)
    bat = models.battery
    back = (float(bat.voc(soc)) - float(bat.r0(soc)) * i) * i
    assert abs(back - p) <= 1e-6 * max(abs(p), 1.0)
    assert float(bat.r0(soc)) * i * i >= 0
    if s.mode == Mode.PURE_ELECTRIC and bool(s.traction):
        assert p > 0
    if s.mode == Mode.BATTERY_CHARGING:
        assert p < 0 and float(s.soc_next) > soc
    assert bool(s.engine_on) == (float(s.T_eng) > 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.35, 0.75), st.integers(1, 5), st.floats(1.0, 35.0), st.floats(-0.5, 2.0))
def test_fuel_monotone_in_alpha(soc, gear, v, a):
    alphas = np.linspace(0.0, 1.0, 21)
    s = evaluate_stage(State(soc), Control(alphas, gear), (v, a), Models())
    fuel = np.where(s.feasible, s.fuel_rate, np.nan)
    ok = np.isfinite(fuel)
    assert np.all(np.diff(fuel[ok]) >= -1e-15)
