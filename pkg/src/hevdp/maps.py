"""Tabulated component maps and their file formats."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class MapFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridMap:
    """Bilinear map over (speed, torque); NaN outside the breakpoints.

    ``values[i, j]`` is the value at ``torques[i]``, ``speeds[j]``.
    """

    speeds: np.ndarray
    torques: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=float)
        torques = np.asarray(self.torques, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (torques.size, speeds.size):
            raise MapFileError(f"map body shape {values.shape} != ({torques.size}, {speeds.size})")
        if np.any(np.diff(speeds) <= 0) or np.any(np.diff(torques) <= 0):
            raise MapFileError("map breakpoints must be strictly increasing")
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "torques", torques)
        object.__setattr__(self, "values", values)
        interp = RegularGridInterpolator(
            (torques, speeds), values, method="linear", bounds_error=False, fill_value=np.nan
        )
        object.__setattr__(self, "_interp", interp)

    def __call__(self, speed, torque) -> np.ndarray:
        speed, torque = np.broadcast_arrays(np.asarray(speed, float), np.asarray(torque, float))
        pts = np.stack([torque.ravel(), speed.ravel()], axis=-1)
        return self._interp(pts).reshape(speed.shape)

    def to_dict(self) -> dict:
        return {
            "speeds": self.speeds.tolist(),
            "torques": self.torques.tolist(),
            "values": self.values.tolist(),
        }


def read_grid_map(path, scale: float = 1.0) -> GridMap:
    """Read a grid map CSV: first row speed breakpoints, first column torque breakpoints."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 3:
        raise MapFileError(f"{path}: need a header row and at least two torque rows")
    try:
        speeds = [float(c) for c in rows[0][1:] if c.strip()]
        torques, body = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(speeds) + 1:
                raise MapFileError(f"{path}:{lineno}: expected {len(speeds) + 1} columns, got {len(row)}")
            torques.append(float(row[0]))
            body.append([float(c) * scale for c in row[1:]])
    except ValueError as exc:
        raise MapFileError(f"{path}: {exc}") from None
    return GridMap(np.array(speeds), np.array(torques), np.array(body))


def write_grid_map(gmap: GridMap, path, scale: float = 1.0) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + [repr(float(s)) for s in gmap.speeds])
        for t, row in zip(gmap.torques, gmap.values):
            w.writerow([repr(float(t))] + [repr(float(v) * scale) for v in row])


def read_battery_curves(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read ``soc,voc_V,r0_ohm`` rows; returns (soc, voc, r0) sorted by SOC."""
    path = Path(path)
    soc, voc, r0 = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or not any(cells):
                continue
            if lineno == 1 and cells[0] == "soc":
                continue
            if len(cells) != 3:
                raise MapFileError(f"{path}:{lineno}: expected soc,voc_V,r0_ohm")
            try:
                s, v, r = (float(c) for c in cells)
            except ValueError:
                raise MapFileError(f"{path}:{lineno}: non-numeric record {row!r}") from None
            soc.append(s)
            voc.append(v)
            r0.append(r)
    order = np.argsort(soc)
    soc_a = np.array(soc)[order]
    if soc_a.size < 1 or np.any(np.diff(soc_a) <= 0):
        raise MapFileError(f"{path}: SOC breakpoints must be distinct")
    return soc_a, np.array(voc)[order], np.array(r0)[order]
