"""Shared fixtures: default models and randomized DP micro-instances."""

from __future__ import annotations

import numpy as np
import pytest

from hevdp.cost import PenaltyWeights
from hevdp.cycleio import DriveCycle
from hevdp.dpcore import Grids, TerminalSpec
from hevdp.powertrain import Models, VehicleConfig, default_models
from hevdp.state import State

MICRO_ALPHAS = (0.0, 0.5, 1.0)


@pytest.fixture(scope="session")
def models() -> Models:
    return default_models()


def two_gear_models() -> Models:
    veh = VehicleConfig(gear_ratios=(3.46, 1.844), gear_efficiencies=(0.93, 0.94))
    return Models(vehicle=veh)


def micro_instance(rng: np.random.Generator):
    """A random problem of at most 5 steps, 2 gears and alpha in {0, 0.5, 1}.

    The initial SOC sits on a coarse lattice (5 to 11 nodes) whose points are
    also nodes of the 201-node DP grid. The terminal cost is linear in SOC so
    that the value function is exactly piecewise linear.
    """
    n = int(rng.integers(1, 6))
    n_gears = int(rng.integers(1, 3))
    speed = np.clip(rng.uniform(2.0, 14.0) + np.cumsum(rng.uniform(-2.0, 2.0, size=n)), 0.0, None)
    speed[rng.random(n) < 0.15] = 0.0
    cycle = DriveCycle(1.0, speed, name="micro")
    weights = PenaltyWeights(
        phi_gamma=float(rng.choice([0.0, rng.uniform(0, 1)])),
        phi_epsilon=float(rng.choice([0.0, rng.uniform(0, 2)])),
        phi_tres=float(rng.choice([0.0, rng.uniform(0, 1)])),
    )
    grids = Grids.uniform(soc_nodes=201, alpha_max=1.0, alpha_nodes=3, n_gears=n_gears)
    # lattice nodes n with (n - 1) dividing 120 land exactly on DP nodes
    lattice_nodes = int(rng.choice([5, 6, 7, 9, 11]))
    stride = 120 // (lattice_nodes - 1)
    lattice = grids.soc_points[40:161:stride]
    assert lattice.size == lattice_nodes
    soc0 = float(rng.choice(lattice))
    x0 = State(soc0, int(rng.integers(1, n_gears + 1)), int(rng.integers(0, 2)))
    terminal = TerminalSpec("linear", soc_target=0.55, weight=float(rng.uniform(200.0, 800.0)))
    mdl = two_gear_models() if n_gears == 2 else Models(vehicle=VehicleConfig(
        gear_ratios=(1.844,), gear_efficiencies=(0.94,)))
    return cycle, mdl, weights, grids, terminal, x0


# --- acceptance verdicts ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> str:
    ACCEPTANCE[number] = (bool(ok), detail)
    return f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
