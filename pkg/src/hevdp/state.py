"""DP state and control tuples. Fields may be scalars or broadcastable arrays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class State:
    soc: Any
    prev_gear: Any = 1
    prev_engine: Any = 0


@dataclass(frozen=True)
class Control:
    alpha: Any
    gear: Any
