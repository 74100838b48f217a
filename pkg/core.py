#!/usr/bin/env python3
"""
core.py - Shared Domain Types

WHY THIS SCRIPT EXISTS:
- Defines the time grid, sensor layout and velocity matrices every other module uses
- Builds the per-time-index velocity matrix and the forgetting weights of the least-squares fit
- Keeps one place where dimensions and speed validity are checked

KEY ARCHITECTURAL DECISIONS:
- IMMUTABLE TYPES: frozen dataclasses with read-only arrays; safe to share across worker threads
- CHRONOLOGICAL DAY SETS: the newest day is last and receives forgetting weight 1
- VALIDATE AT CONSTRUCTION: a DayVelocityMatrix that exists is finite and positive
"""

import datetime
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np

from errors import DataError, DimensionError, IndexRangeError, ParameterError

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 24 * 60


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TimeGrid:
    """
    Uniform grid t_0..t_K in minutes from midnight.

    The default is the 6 AM - 9 PM window at 5-minute resolution (181 points).
    """

    start_minute: float = 360.0
    step_minutes: float = 5.0
    num_steps: int = 181

    def __post_init__(self):
        if self.step_minutes <= 0:
            raise ParameterError(f"step_minutes must be positive, got {self.step_minutes}")
        if self.num_steps < 2:
            raise ParameterError(f"num_steps must be at least 2, got {self.num_steps}")

    @property
    def num_intervals(self) -> int:
        """K, the number of transitions on the grid."""
        return self.num_steps - 1

    @property
    def end_minute(self) -> float:
        return self.time_of(self.num_intervals)

    @property
    def times(self) -> np.ndarray:
        return self.start_minute + self.step_minutes * np.arange(self.num_steps, dtype=float)

    def time_of(self, k: int) -> float:
        self.check_index(k)
        return self.start_minute + k * self.step_minutes

    def check_index(self, k: int) -> None:
        if not 0 <= k <= self.num_intervals:
            raise IndexRangeError(f"Time index {k} outside grid 0..{self.num_intervals}", k=k)

    def index_of(self, minute: float) -> int:
        """Grid index of an exact grid time."""
        offset = (minute - self.start_minute) / self.step_minutes
        k = int(round(offset))
        if abs(offset - k) > 1e-9:
            raise ParameterError(f"Minute {minute} is not on the grid", minute=minute)
        self.check_index(k)
        return k

    def steps_for(self, minutes: float) -> int:
        """Number of grid steps spanned by a duration that must be a whole multiple of the step."""
        steps = minutes / self.step_minutes
        if abs(steps - round(steps)) > 1e-9:
            raise ParameterError(
                f"Duration {minutes} min is not a multiple of the {self.step_minutes}-minute step",
                minutes=minutes,
            )
        return int(round(steps))


@dataclass(frozen=True)
class SensorLayout:
    """Sensor mileposts along one corridor direction, strictly increasing."""

    positions: Tuple[float, ...]
    sensor_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        positions = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", positions)
        if len(positions) < 2:
            raise ParameterError(f"A layout needs at least 2 sensors, got {len(positions)}")
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ParameterError("Sensor positions must be strictly increasing")
        if not self.sensor_ids:
            object.__setattr__(self, "sensor_ids", tuple(f"s{m}" for m in range(len(positions))))
        elif len(self.sensor_ids) != len(positions):
            raise DimensionError(
                f"{len(self.sensor_ids)} sensor ids for {len(positions)} positions"
            )

    @property
    def num_sensors(self) -> int:
        return len(self.positions)

    @property
    def first(self) -> float:
        return self.positions[0]

    @property
    def last(self) -> float:
        return self.positions[-1]

    @property
    def length(self) -> float:
        return self.last - self.first

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)

    @classmethod
    def evenly_spaced(cls, num_sensors: int, spacing: float, start: float = 0.0) -> "SensorLayout":
        return cls(tuple(start + spacing * m for m in range(num_sensors)))


@dataclass(frozen=True, eq=False)
class DayVelocityMatrix:
    """
    One day of sensor speeds: rows are sensors, columns are grid points.

    Args:
        day_id: ISO date (YYYY-MM-DD) for real and synthetic data; other labels
            are allowed but carry no weekday
        values: M x (K+1) speeds in mph
        mask: M x (K+1) booleans, True where the cell was observed, False where imputed
    """

    day_id: str
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"Day {self.day_id}: expected a 2-D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"Day {self.day_id}: speeds contain non-finite values", day=self.day_id)
        if np.any(values <= 0):
            raise DataError(f"Day {self.day_id}: speeds must be positive", day=self.day_id)
        if self.mask is None:
            mask = np.ones(values.shape, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise DimensionError(
                    f"Day {self.day_id}: mask shape {mask.shape} != values shape {values.shape}"
                )
        object.__setattr__(self, "values", _read_only(values))
        object.__setattr__(self, "mask", _read_only(mask))

    @property
    def num_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def num_points(self) -> int:
        return self.values.shape[1]

    @property
    def imputed_count(self) -> int:
        return int(np.count_nonzero(~self.mask))

    @property
    def date(self) -> datetime.date:
        try:
            return datetime.date.fromisoformat(self.day_id)
        except ValueError:
            raise DataError(f"Day id '{self.day_id}' is not an ISO date", day=self.day_id) from None

    @property
    def weekday(self) -> int:
        """Monday == 0 ... Sunday == 6."""
        return self.date.weekday()

    def column(self, k: int) -> np.ndarray:
        if not 0 <= k < self.num_points:
            raise IndexRangeError(f"Time index {k} outside day 0..{self.num_points - 1}", k=k)
        return self.values[:, k]

    def check_shape(self, grid: TimeGrid, layout: SensorLayout) -> None:
        expected = (layout.num_sensors, grid.num_steps)
        if self.values.shape != expected:
            raise DimensionError(
                f"Day {self.day_id}: shape {self.values.shape} does not match layout/grid {expected}",
                day=self.day_id,
            )


def _is_iso_date(label: str) -> bool:
    try:
        datetime.date.fromisoformat(label)
        return True
    except ValueError:
        return False


class DaySet:
    """
    Ordered collection of days, oldest first.

    Order matters: the forgetting factor weights day i by lambda^(N-1-i), so the
    last day always carries weight 1.
    """

    def __init__(self, days: Iterable[DayVelocityMatrix] = ()):
        self._days: Tuple[DayVelocityMatrix, ...] = tuple(days)
        ids = [d.day_id for d in self._days]
        if len(set(ids)) != len(ids):
            raise DataError("Day ids in a day set must be unique")
        if ids and all(_is_iso_date(i) for i in ids):
            if ids != sorted(ids):
                raise DataError("Days must be in chronological order, oldest first")
        shapes = {d.values.shape for d in self._days}
        if len(shapes) > 1:
            raise DimensionError(f"Days in a day set have different shapes: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self._days)

    def __iter__(self) -> Iterator[DayVelocityMatrix]:
        return iter(self._days)

    def __getitem__(self, item: Union[int, slice]):
        if isinstance(item, slice):
            return DaySet(self._days[item])
        return self._days[item]

    def __repr__(self) -> str:
        if not self._days:
            return "DaySet([])"
        return f"DaySet({len(self)} days, {self._days[0].day_id}..{self._days[-1].day_id})"

    @property
    def days(self) -> Tuple[DayVelocityMatrix, ...]:
        return self._days

    @property
    def day_ids(self) -> List[str]:
        return [d.day_id for d in self._days]

    @property
    def shape(self) -> Tuple[int, int]:
        """(M, K+1) shared by every day."""
        if not self._days:
            raise DimensionError("An empty day set has no shape")
        return self._days[0].values.shape

    def stack(self) -> np.ndarray:
        """All speeds as a |D| x M x (K+1) array."""
        return np.stack([d.values for d in self._days])

    def concat(self, other: "DaySet") -> "DaySet":
        return DaySet(self._days + tuple(other))

    def appended(self, day: DayVelocityMatrix) -> "DaySet":
        return DaySet(self._days + (day,))

    def check_shape(self, grid: TimeGrid, layout: SensorLayout) -> None:
        for day in self._days:
            day.check_shape(grid, layout)


@dataclass(frozen=True)
class PeriodMask:
    """Named classifier of a departure instant given (weekday, minute of day)."""

    name: str
    predicate: Callable[[int, float], bool] = field(repr=False)

    def contains(self, weekday: int, minute: float) -> bool:
        return bool(self.predicate(weekday, minute))

    def complement(self, name: str, window: Tuple[float, float]) -> "PeriodMask":
        """Everything inside `window` that this mask does not contain."""
        lo, hi = window
        inner = self.predicate
        return PeriodMask(name, lambda weekday, minute: lo <= minute <= hi and not inner(weekday, minute))


def time_velocity_matrix(dayset: DaySet, k: int) -> np.ndarray:
    """
    Velocity vectors of every day at time index k, side by side.

    Returns:
        M x |D| matrix whose column j is day j's speeds at k (oldest day first)
    """
    if len(dayset) == 0:
        raise DimensionError("Cannot build a velocity matrix from an empty day set")
    num_points = dayset.shape[1]
    if not 0 <= k < num_points:
        raise IndexRangeError(f"Time index {k} outside grid 0..{num_points - 1}", k=k)
    return np.column_stack([day.values[:, k] for day in dayset])


def forgetting_weights(n: int, lam: float) -> np.ndarray:
    """
    Diagonal of the forgetting matrix: (lam^(n-1), ..., lam, 1).

    Args:
        n: number of days
        lam: forgetting factor in (0, 1]
    """
    if n < 1:
        raise ParameterError(f"Need at least one day, got n={n}")
    if not 0 < lam <= 1:
        raise ParameterError(f"Forgetting factor must lie in (0, 1], got {lam}", forgetting_factor=lam)
    return np.power(float(lam), np.arange(n - 1, -1, -1, dtype=float))
