"""Running cost: fuel mass plus gear-shift, engine-start and torque-reserve penalties.

All terms are in grams of fuel-equivalent.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from hevdp.powertrain import StageResult
from hevdp.state import Control, State

WEIGHT_NAMES = ("phi_gamma", "phi_epsilon", "phi_tres")


@dataclass(frozen=True)
class PenaltyWeights:
    phi_gamma: float = 0.0  # per gear shift
    phi_epsilon: float = 0.0  # per engine start
    phi_tres: float = 0.0  # per unit torque utilization per step
    dt: float = 1.0

    def __post_init__(self):
        for name in WEIGHT_NAMES:
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def replace(self, **changes) -> "PenaltyWeights":
        return PenaltyWeights(**{**asdict(self), **changes})

    @property
    def is_fuel_only(self) -> bool:
        return self.phi_gamma == 0 and self.phi_epsilon == 0 and self.phi_tres == 0


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    fuel_g: np.ndarray
    shift_g: np.ndarray
    start_g: np.ndarray
    tres_g: np.ndarray

    @property
    def total_g(self) -> np.ndarray:
        return self.fuel_g + self.shift_g + self.start_g + self.tres_g


def shift_penalty(gear, prev_gear, weights: PenaltyWeights):
    return np.where(np.asarray(gear) != np.asarray(prev_gear), weights.phi_gamma, 0.0)


def start_penalty(engine_on, prev_engine, weights: PenaltyWeights):
    return np.where(np.asarray(engine_on) & (np.asarray(prev_engine) == 0), weights.phi_epsilon, 0.0)


def reserve_penalty(utilization, traction, weights: PenaltyWeights):
    return np.where(traction, weights.phi_tres * np.asarray(utilization), 0.0)


def stage_cost(stage: StageResult, x: State, u: Control, weights: PenaltyWeights) -> CostBreakdown:
    """Cost of one step. Infeasible stages get an infinite fuel term."""
    fuel = np.where(stage.feasible, stage.fuel_rate * weights.dt * 1000.0, np.inf)
    return CostBreakdown(
        fuel_g=fuel,
        shift_g=shift_penalty(u.gear, x.prev_gear, weights),
        start_g=start_penalty(stage.engine_on, x.prev_engine, weights),
        tres_g=reserve_penalty(stage.utilization, stage.traction, weights),
    )
