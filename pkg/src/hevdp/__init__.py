"""Dynamic-programming energy management for a p2 parallel hybrid with driveability penalties."""

from hevdp.cycleio import DriveCycle, compose, load_cycle, synth_cycle
from hevdp.cost import CostBreakdown, PenaltyWeights, stage_cost
from hevdp.dpcore import (
    Control,
    Grids,
    Problem,
    Solution,
    State,
    TerminalSpec,
    Trajectory,
    backward_pass,
    brute_force_solve,
    forward_pass,
    solve,
    sweep,
)
from hevdp.metrics import StrategyReport, report
from hevdp.powertrain import (
    BatteryModel,
    EMachineModel,
    EngineModel,
    Mode,
    Models,
    StageResult,
    VehicleConfig,
    default_models,
    evaluate_stage,
)

__version__ = "0.1.0"

__all__ = [
    "BatteryModel",
    "Control",
    "CostBreakdown",
    "DriveCycle",
    "EMachineModel",
    "EngineModel",
    "Grids",
    "Mode",
    "Models",
    "PenaltyWeights",
    "Problem",
    "Solution",
    "StageResult",
    "State",
    "StrategyReport",
    "TerminalSpec",
    "Trajectory",
    "VehicleConfig",
    "backward_pass",
    "brute_force_solve",
    "compose",
    "default_models",
    "evaluate_stage",
    "forward_pass",
    "load_cycle",
    "report",
    "solve",
    "stage_cost",
    "sweep",
    "synth_cycle",
]
