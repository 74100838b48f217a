#!/usr/bin/env python3
"""
traveltime.py - Continuous Velocity Fields and Travel Time Integration

WHY THIS SCRIPT EXISTS:
- Turns a gridded (time x milepost) speed field into a continuous v(t, x)
- Integrates a vehicle trajectory through that field to get travel time
- Serves observed, predicted and mixed fields alike, so every predictor is scored the same way

KEY ARCHITECTURAL DECISIONS:
- BILINEAR INTERPOLATION: degree-1 bivariate B-splines on a rectangular grid are exactly
  bilinear; scipy's RegularGridInterpolator does the work
- FORWARD EULER IN SPACE: t <- t + dx / v(t, x); the final step is shortened to land on the destination
- WHOLE TRIP INSIDE THE FIELD: a trip whose arrival falls after the last field time is
  reported as horizon-exceeded, so callers can extend the field and retry
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from core import DayVelocityMatrix, SensorLayout, TimeGrid
from errors import DataError, DimensionError, ExtentError, HorizonExceededError, ParameterError

logger = logging.getLogger(__name__)

MINUTES_PER_HOUR = 60.0
DEFAULT_DELTA_X = 0.01
POSITION_CLAMP = 1e-9


@dataclass(frozen=True, eq=False)
class GriddedField:
    """
    Speeds on a (time, milepost) grid.

    Args:
        times: T absolute times in minutes from midnight, strictly increasing, T >= 2
        layout: sensor mileposts (rows)
        values: M x T speeds in mph, strictly positive
    """

    times: np.ndarray
    layout: SensorLayout
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if times.size < 2:
            raise DimensionError(f"A field needs at least 2 time columns, got {times.size}")
        if np.any(np.diff(times) <= 0):
            raise DimensionError("Field times must be strictly increasing")
        if values.shape != (self.layout.num_sensors, times.size):
            raise DimensionError(
                f"Field values shape {values.shape} != ({self.layout.num_sensors}, {times.size})"
            )
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataError("Field speeds must be finite and positive")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_day(cls, day: DayVelocityMatrix, grid: TimeGrid, layout: SensorLayout) -> "GriddedField":
        day.check_shape(grid, layout)
        return cls(times=grid.times, layout=layout, values=day.values)

    @property
    def t_first(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        return float(self.times[-1])


class VelocityFieldFn:
    """
    Continuous v(t, x) over a GriddedField's extent.

    Exact at grid nodes, continuous, and positive everywhere inside the extent
    (bilinear weights are convex, the stored speeds are positive).
    """

    def __init__(self, field: GriddedField, position_clamp: float = POSITION_CLAMP):
        self.field = field
        self.position_clamp = position_clamp
        self._positions = field.layout.as_array()
        self._interpolator = RegularGridInterpolator(
            (field.times, self._positions), field.values.T, method="linear", bounds_error=True
        )

    @property
    def t_first(self) -> float:
        return self.field.t_first

    @property
    def t_last(self) -> float:
        return self.field.t_last

    @property
    def x_first(self) -> float:
        return float(self._positions[0])

    @property
    def x_last(self) -> float:
        return float(self._positions[-1])

    def clamp_position(self, x: float, t: float = float("nan")) -> float:
        if x < self.x_first:
            if self.x_first - x > self.position_clamp:
                raise ExtentError(f"Position {x} before first sensor {self.x_first}", t=t, x=x)
            return self.x_first
        if x > self.x_last:
            if x - self.x_last > self.position_clamp:
                raise ExtentError(f"Position {x} beyond last sensor {self.x_last}", t=t, x=x)
            return self.x_last
        return x

    def __call__(self, t: float, x: float) -> float:
        if not self.t_first <= t <= self.t_last:
            raise ExtentError(f"Time {t} outside field [{self.t_first}, {self.t_last}]", t=t, x=x)
        x = self.clamp_position(x, t)
        return float(self._interpolator([[t, x]])[0])

    def column_profile(self, column: int, xs: np.ndarray) -> np.ndarray:
        """Speeds at grid time `column` for every position in xs (already inside the extent)."""
        t = self.field.times[column]
        points = np.column_stack([np.full(xs.size, t), xs])
        return self._interpolator(points)


def interpolate_field(field: GriddedField) -> VelocityFieldFn:
    """Bilinear view of a gridded field."""
    return VelocityFieldFn(field)


def travel_time(
    fieldfn: VelocityFieldFn,
    t0: float,
    x0: float,
    x_dest: float,
    delta_x: float = DEFAULT_DELTA_X,
) -> float:
    """
    Travel time in minutes from (t0, x0) to x_dest through the field.

    Each step advances time by dx / v(t, x) and position by dx; the last step
    covers only the remaining distance.

    Raises:
        ParameterError: x0 >= x_dest, non-positive delta_x, or endpoints outside the corridor
        ExtentError: t0 outside the field's time extent
        HorizonExceededError: the vehicle is still travelling at the field's last time
    """
    if delta_x <= 0:
        raise ParameterError(f"delta_x must be positive, got {delta_x}")
    if not x0 < x_dest:
        raise ParameterError(f"Trips run downstream: need x0 < x_dest, got {x0} >= {x_dest}", x0=x0, x_dest=x_dest)
    try:
        x0 = fieldfn.clamp_position(x0, t0)
        x_dest = fieldfn.clamp_position(x_dest, t0)
    except ExtentError as e:
        raise ParameterError(f"Trip endpoints must lie on the corridor: {e.message}", x0=x0, x_dest=x_dest) from None
    if not fieldfn.t_first <= t0 <= fieldfn.t_last:
        raise ExtentError(f"Departure {t0} outside field [{fieldfn.t_first}, {fieldfn.t_last}]", t=t0, x=x0)

    num_steps = max(1, int(np.ceil((x_dest - x0) / delta_x - 1e-12)))
    xs = np.minimum(x0 + delta_x * np.arange(num_steps), x_dest)
    lengths = np.minimum(delta_x, x_dest - xs)

    times = fieldfn.field.times
    last_column = times.size - 1
    column = int(np.searchsorted(times, t0, side="right")) - 1
    column = min(max(column, 0), last_column - 1)
    profiles = {}

    def profile(c: int) -> np.ndarray:
        if c not in profiles:
            profiles[c] = fieldfn.column_profile(c, xs)
        return profiles[c]

    t = t0
    for j in range(num_steps):
        if t > fieldfn.t_last:
            raise HorizonExceededError(
                f"Trajectory left the field at t={t:.3f} after {xs[j] - x0:.3f} miles",
                distance_covered=float(xs[j] - x0),
                elapsed_minutes=t - t0,
            )
        while column < last_column - 1 and t > times[column + 1]:
            column += 1
        w = (t - times[column]) / (times[column + 1] - times[column])
        speed = (1.0 - w) * profile(column)[j] + w * profile(column + 1)[j]
        t += MINUTES_PER_HOUR * lengths[j] / speed

    if t > fieldfn.t_last:
        raise HorizonExceededError(
            f"Arrival at t={t:.3f} falls after the field's last time {fieldfn.t_last}",
            distance_covered=float(x_dest - x0),
            elapsed_minutes=t - t0,
        )
    return t - t0


def experienced_travel_time(
    day: DayVelocityMatrix,
    layout: SensorLayout,
    grid: TimeGrid,
    t0: float,
    x0: float,
    x_dest: float,
    delta_x: float = DEFAULT_DELTA_X,
) -> float:
    """Travel time a vehicle departing at t0 actually experienced on an observed day."""
    return travel_time(interpolate_field(GriddedField.from_day(day, grid, layout)), t0, x0, x_dest, delta_x)


def write_field_csv(field: GriddedField, grid: TimeGrid, path: Union[str, Path]) -> None:
    """
    Rows are sensors; columns are sensor_id, milepost_miles, then one column per
    grid index covered by the field.
    """
    indices = [grid.index_of(t) for t in field.times]
    frame = pd.DataFrame(field.values, columns=[str(k) for k in indices])
    frame.insert(0, "milepost_miles", field.layout.positions)
    frame.insert(0, "sensor_id", field.layout.sensor_ids)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")


def read_field_csv(path: Union[str, Path], grid: TimeGrid) -> GriddedField:
    """Inverse of write_field_csv."""
    try:
        frame = pd.read_csv(path, dtype={"sensor_id": str})
    except pd.errors.EmptyDataError:
        raise DataError(f"Field file is empty: {path}", path=str(path)) from None
    if list(frame.columns[:2]) != ["sensor_id", "milepost_miles"]:
        raise DataError(f"Field file {path} must start with sensor_id,milepost_miles columns", line=1)
    try:
        indices = [int(c) for c in frame.columns[2:]]
    except ValueError:
        raise DataError(f"Field file {path} has non-integer time index columns", line=1) from None
    times = np.array([grid.time_of(k) for k in indices])
    layout = SensorLayout(
        positions=tuple(frame["milepost_miles"].astype(float)), sensor_ids=tuple(frame["sensor_id"])
    )
    return GriddedField(times=times, layout=layout, values=frame.iloc[:, 2:].to_numpy(dtype=float))


# TEST SUITE - quick smoke check on a constant field
if __name__ == "__main__":
    print("Test 1: constant 60 mph over 30 miles")
    layout = SensorLayout.evenly_spaced(4, 10.0)
    field = GriddedField(times=np.array([360.0, 420.0, 480.0]), layout=layout, values=np.full((4, 3), 60.0))
    minutes = travel_time(interpolate_field(field), 360.0, 0.0, 30.0)
    assert abs(minutes - 30.0) < 1e-9, minutes
    print(f" PASS: {minutes:.6f} minutes\n")
