"""Drive cycles: loading, resampling, composition and synthetic generation.

A cycle is the exogenous input of the optimal control problem: a uniformly
sampled speed trace plus the forward-difference acceleration that moves the
vehicle from one sample to the next.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HEADER = ("time_s", "speed_mps")


class CycleError(ValueError):
    """Raised for malformed or physically invalid cycle data."""


class CycleParseError(CycleError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def forward_accel(speed: np.ndarray, timestep: float) -> np.ndarray:
    accel = np.zeros_like(speed, dtype=float)
    if speed.size > 1:
        accel[:-1] = np.diff(speed) / timestep
    return accel


@dataclass(frozen=True)
class DriveCycle:
    """Uniformly sampled speed profile.

    ``accel[k]`` is the acceleration required to go from ``speed[k]`` to
    ``speed[k + 1]`` within one timestep; the last sample has zero
    acceleration.
    """

    timestep: float
    speed: np.ndarray
    accel: np.ndarray = field(default=None)  # type: ignore[assignment]
    name: str = "cycle"

    def __post_init__(self):
        if not self.timestep > 0:
            raise CycleError(f"timestep must be positive, got {self.timestep}")
        speed = np.asarray(self.speed, dtype=float).reshape(-1)
        if speed.size == 0:
            raise CycleError("cycle has no samples")
        if np.any(~np.isfinite(speed)):
            raise CycleError("cycle contains non-finite speeds")
        if np.any(speed < 0):
            k = int(np.argmax(speed < 0))
            raise CycleError(f"negative speed {speed[k]} at sample {k}")
        accel = self.accel
        if accel is None:
            accel = forward_accel(speed, self.timestep)
        accel = np.asarray(accel, dtype=float).reshape(-1)
        if accel.shape != speed.shape:
            raise CycleError("speed and accel must have equal length")
        speed.setflags(write=False)
        accel.setflags(write=False)
        object.__setattr__(self, "speed", speed)
        object.__setattr__(self, "accel", accel)

    def __len__(self) -> int:
        return self.speed.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.timestep

    @property
    def duration(self) -> float:
        """Duration in seconds, counting one timestep per sample."""
        return len(self) * self.timestep

    @property
    def distance(self) -> float:
        """Distance in metres (rectangle rule, consistent with the stage model)."""
        return float(np.sum(self.speed) * self.timestep)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.timestep).tobytes())
        h.update(np.ascontiguousarray(self.speed).tobytes())
        return h.hexdigest()[:16]


def resample(time: np.ndarray, speed: np.ndarray, timestep: float) -> np.ndarray:
    """Linearly interpolate ``speed(time)`` onto a uniform grid starting at ``time[0]``."""
    time = np.asarray(time, dtype=float)
    span = time[-1] - time[0]
    n = int(np.floor(span / timestep + 1e-9)) + 1
    grid = time[0] + np.arange(n) * timestep
    return np.interp(grid, time, speed)


def load_cycle(path, timestep: float = 1.0, name: str | None = None) -> DriveCycle:
    """Read a ``time_s,speed_mps`` CSV file and resample it to ``timestep``."""
    path = Path(path)
    if not timestep > 0:
        raise CycleError(f"timestep must be positive, got {timestep}")
    times: list[float] = []
    speeds: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            cells = [c.strip() for c in row]
            if lineno == 1 and tuple(cells) == HEADER:
                continue
            if len(cells) != 2:
                raise CycleParseError(path, lineno, f"expected 2 columns, got {len(cells)}")
            try:
                t, v = float(cells[0]), float(cells[1])
            except ValueError:
                raise CycleParseError(path, lineno, f"non-numeric record {row!r}") from None
            if v < 0:
                raise CycleError(f"{path}:{lineno}: negative speed {v}")
            if times and not t > times[-1]:
                raise CycleError(f"{path}:{lineno}: time not strictly increasing ({t} after {times[-1]})")
            times.append(t)
            speeds.append(v)
    if not times:
        raise CycleError(f"{path}: no samples")
    speed = resample(np.array(times), np.array(speeds), timestep)
    if speed[0] != 0 or speed[-1] != 0:
        warnings.warn(f"{path}: cycle does not start and end at standstill", stacklevel=2)
    return DriveCycle(timestep, speed, name=name or path.stem)


def save_cycle(cycle: DriveCycle, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for t, v in zip(cycle.time, cycle.speed):
            writer.writerow([repr(float(t)), repr(float(v))])


def compose(cycles: Sequence[DriveCycle], name: str | None = None) -> DriveCycle:
    """Concatenate cycles; acceleration is recomputed across the seams."""
    if not cycles:
        raise CycleError("nothing to compose")
    dt = cycles[0].timestep
    for c in cycles[1:]:
        if c.timestep != dt:
            raise CycleError(f"timestep mismatch: {c.name} has {c.timestep}, expected {dt}")
    if len(cycles) == 1 and name is None:
        return cycles[0]
    speed = np.concatenate([c.speed for c in cycles])
    return DriveCycle(dt, speed, name=name or "+".join(c.name for c in cycles))


def synth_cycle(
    segments: Iterable[tuple[float, float, float]],
    timestep: float = 1.0,
    name: str = "synthetic",
) -> DriveCycle:
    """Trapezoidal speed profile.

    Each segment ``(target, ramp, hold)`` ramps linearly from the current
    speed to ``target`` over ``ramp`` seconds and holds it for ``hold``
    seconds. The profile starts at rest and ends with a ramp to rest using the
    last segment's ramp duration.
    """
    segments = [tuple(float(x) for x in s) for s in segments]
    knots_t, knots_v = [0.0], [0.0]
    for target, ramp, hold in segments:
        if target < 0:
            raise CycleError(f"negative target speed {target}")
        if not (ramp > 0 and hold > 0):
            raise CycleError(f"segment durations must be positive, got ramp={ramp}, hold={hold}")
        knots_t += [knots_t[-1] + ramp, knots_t[-1] + ramp + hold]
        knots_v += [target, target]
    if segments:
        knots_t.append(knots_t[-1] + segments[-1][1])
        knots_v.append(0.0)
    speed = resample(np.array(knots_t), np.array(knots_v), timestep)
    return DriveCycle(timestep, speed, name=name)


def parse_segments(text: str) -> list[tuple[float, float, float]]:
    """Parse ``"13.9:20:60,27.8:30:120"`` into segment tuples."""
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(","))):
        parts = chunk.split(":")
        if len(parts) != 3:
            raise CycleError(f"segment {chunk!r} must be target:ramp:hold")
        out.append(tuple(float(p) for p in parts))
    return out


# Synthetic stand-ins for an urban / rural road / motorway mission. Speeds in m/s.
_URBAN = [
    (8.0, 6, 12), (0.0, 5, 10), (13.0, 9, 20), (6.0, 5, 8), (11.0, 5, 15),
    (0.0, 7, 14), (14.0, 10, 25), (0.0, 8, 12), (9.0, 6, 10), (4.0, 4, 6),
    (12.0, 7, 18), (0.0, 7, 20), (15.0, 11, 30), (10.0, 4, 10), (0.0, 6, 15),
    (7.0, 5, 8), (13.5, 6, 22), (0.0, 8, 18), (11.0, 8, 14), (0.0, 6, 10),
    (16.0, 12, 28), (8.0, 5, 9), (12.0, 4, 16), (0.0, 8, 14),
]
_RURAL = [
    (14.0, 10, 20), (22.0, 12, 60), (17.0, 6, 25), (25.0, 14, 80), (19.0, 8, 20),
    (27.0, 14, 90), (12.0, 12, 20), (23.0, 14, 60), (26.5, 6, 50), (15.0, 8, 25),
    (24.0, 12, 60), (10.0, 10, 15),
]
_MOTORWAY = [
    (20.0, 14, 20), (30.0, 18, 80), (34.0, 10, 120), (28.0, 8, 40),
    (36.0, 16, 150), (31.0, 8, 40), (35.0, 8, 60), (15.0, 14, 15),
]

BUILTIN = ("urban", "rural", "motorway", "mixed30", "mixed52")


def builtin_cycle(name: str, timestep: float = 1.0) -> DriveCycle:
    """Bundled synthetic cycles.

    ``mixed30`` is urban + rural + motorway (about half an hour); ``mixed52``
    repeats the urban part and pads with standstill to exactly 52 minutes at
    1 s resolution.
    """
    parts = {
        "urban": lambda: synth_cycle(_URBAN, timestep, "urban"),
        "rural": lambda: synth_cycle(_RURAL, timestep, "rural"),
        "motorway": lambda: synth_cycle(_MOTORWAY, timestep, "motorway"),
    }
    if name in parts:
        return parts[name]()
    if name == "mixed30":
        return compose([parts[p]() for p in ("urban", "rural", "motorway")], name="mixed30")
    if name == "mixed52":
        base = compose([parts[p]() for p in ("urban", "urban", "rural", "urban", "motorway")])
        n = int(round(3120 / timestep))
        speed = np.zeros(n)
        m = min(n, len(base))
        speed[:m] = base.speed[:m]
        speed[-1] = 0.0
        return DriveCycle(timestep, speed, name="mixed52")
    raise CycleError(f"unknown builtin cycle {name!r}; choose from {', '.join(BUILTIN)}")


def resolve_cycle(ref: str, timestep: float = 1.0) -> DriveCycle:
    """``builtin:<name>`` or a CSV path."""
    if ref.startswith("builtin:"):
        return builtin_cycle(ref.split(":", 1)[1], timestep)
    return load_cycle(ref, timestep)
