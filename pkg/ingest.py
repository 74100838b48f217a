#!/usr/bin/env python3
"""
ingest.py - Dataset Loading, Splitting and Synthetic Corridors

WHY THIS SCRIPT EXISTS:
- Turns PeMS-style CSV exports into validated DaySets on the configured time grid
- Fills sensor outages so every day is a complete M x (K+1) matrix
- Generates synthetic corridors from known transition matrices for desk-scale checks

KEY ARCHITECTURAL DECISIONS:
- ONE ROW PER CELL: `day,sensor_id,time_index,speed_mph` + `sensor_id,milepost_miles`
- LINEAR IMPUTATION ALONG TIME: nearest observed value at the day edges; imputed cells are flagged
- REJECT HEAVY GAPS: days missing more than the configured fraction are dropped with a warning record
- SEEDED GENERATION: synthetic data is a pure function of its spec
"""

import datetime
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core import DayVelocityMatrix, DaySet, SensorLayout, TimeGrid
from errors import (
    DataError,
    DimensionError,
    ParameterError,
    UnknownSensorError,
    UnstableSpecError,
)

logger = logging.getLogger(__name__)

SPEED_HEADER = ["day", "sensor_id", "time_index", "speed_mph"]
LAYOUT_HEADER = ["sensor_id", "milepost_miles"]


@dataclass(frozen=True)
class DatasetSchema:
    """Column bindings for the speed and layout files."""

    day_column: str = "day"
    sensor_column: str = "sensor_id"
    time_index_column: str = "time_index"
    speed_column: str = "speed_mph"
    layout_sensor_column: str = "sensor_id"
    layout_milepost_column: str = "milepost_miles"
    max_missing_fraction: float = 0.2

    def __post_init__(self):
        if not 0 <= self.max_missing_fraction <= 1:
            raise ParameterError(
                f"max_missing_fraction must lie in [0, 1], got {self.max_missing_fraction}"
            )


@dataclass
class IngestReport:
    """What happened to each day during loading."""

    days_kept: List[str] = field(default_factory=list)
    rejected: List[Dict[str, Any]] = field(default_factory=list)
    imputed_cells: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "days_kept": len(self.days_kept),
            "days_rejected": len(self.rejected),
            "imputed_cells_total": int(sum(self.imputed_cells.values())),
            "first_day": self.days_kept[0] if self.days_kept else None,
            "last_day": self.days_kept[-1] if self.days_kept else None,
            "rejected": self.rejected,
            "imputed_cells": self.imputed_cells,
        }


@dataclass(frozen=True)
class IngestResult:
    dayset: DaySet
    layout: SensorLayout
    report: IngestReport


def _read_csv(path: Union[str, Path], required: Sequence[str], label: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{label} file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"{label} file is empty: {path}", path=str(path)) from None
    except pd.errors.ParserError as e:
        raise DataError(f"{label} file does not parse: {e}", path=str(path)) from None
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{label} file {path} lacks columns {missing}", line=1, path=str(path))
    if frame.empty:
        raise DataError(f"{label} file has a header but no rows: {path}", path=str(path))
    return frame


def _line_of(row_position: int) -> int:
    # header is line 1
    return int(row_position) + 2


def load_layout(layout_file: Union[str, Path], schema: DatasetSchema = DatasetSchema()) -> SensorLayout:
    """
    Read sensor mileposts and order sensors along the corridor.

    Returns:
        SensorLayout sorted by milepost, carrying the sensor ids
    """
    frame = _read_csv(
        layout_file, [schema.layout_sensor_column, schema.layout_milepost_column], "Layout"
    )
    mileposts = pd.to_numeric(frame[schema.layout_milepost_column], errors="coerce")
    bad = np.flatnonzero(~np.isfinite(mileposts.to_numpy(dtype=float)))
    if bad.size:
        raise DataError(
            f"Layout milepost does not parse: '{frame[schema.layout_milepost_column].iloc[bad[0]]}'",
            line=_line_of(bad[0]),
        )
    sensor_ids = frame[schema.layout_sensor_column].str.strip()
    duplicated = np.flatnonzero(sensor_ids.duplicated().to_numpy())
    if duplicated.size:
        raise DataError(
            f"Sensor '{sensor_ids.iloc[duplicated[0]]}' listed twice in layout", line=_line_of(duplicated[0])
        )
    order = np.argsort(mileposts.to_numpy(dtype=float), kind="stable")
    return SensorLayout(
        positions=tuple(mileposts.to_numpy(dtype=float)[order]),
        sensor_ids=tuple(sensor_ids.to_numpy()[order]),
    )


def impute_row(row: np.ndarray) -> np.ndarray:
    """
    Fill NaN gaps of one sensor's day by linear interpolation along time.

    Leading and trailing gaps take the nearest observed value.
    """
    observed = np.isfinite(row)
    if observed.all():
        return row.copy()
    if not observed.any():
        raise DataError("Cannot impute a sensor with no observations")
    idx = np.arange(row.size)
    return np.interp(idx, idx[observed], row[observed])


def load_dataset(
    speed_file: Union[str, Path],
    layout_file: Union[str, Path],
    schema: DatasetSchema = DatasetSchema(),
    grid: TimeGrid = TimeGrid(),
) -> IngestResult:
    """
    Load a speed CSV onto the grid, impute gaps, and reject sparse days.

    Args:
        speed_file: CSV with one row per (day, sensor, grid slot)
        layout_file: CSV mapping sensor ids to mileposts
        schema: column bindings and rejection threshold
        grid: time grid the time_index column refers to

    Returns:
        IngestResult with the DaySet (oldest day first), layout and report

    Raises:
        UnknownSensorError: a sensor id is absent from the layout
        DataError: a row does not parse, a cell is duplicated, or an index is off the grid
    """
    return load_speeds(speed_file, load_layout(layout_file, schema), schema, grid)


def load_speeds(
    speed_file: Union[str, Path],
    layout: SensorLayout,
    schema: DatasetSchema = DatasetSchema(),
    grid: TimeGrid = TimeGrid(),
) -> IngestResult:
    """Same as load_dataset for a layout already in memory (e.g. the one stored in a model)."""
    frame = _read_csv(
        speed_file,
        [schema.day_column, schema.sensor_column, schema.time_index_column, schema.speed_column],
        "Speed",
    )

    sensor_index = {sid: m for m, sid in enumerate(layout.sensor_ids)}
    sensors = frame[schema.sensor_column].str.strip()
    unknown = np.flatnonzero(~sensors.isin(list(sensor_index)).to_numpy())
    if unknown.size:
        raise UnknownSensorError(sensors.iloc[unknown[0]], line=_line_of(unknown[0]))

    days = frame[schema.day_column].str.strip()
    empty_day = np.flatnonzero((days == "").to_numpy())
    if empty_day.size:
        raise DataError("Row has an empty day label", line=_line_of(empty_day[0]))

    time_raw = frame[schema.time_index_column].str.strip()
    time_index = pd.to_numeric(time_raw, errors="coerce").to_numpy(dtype=float)
    bad_time = np.flatnonzero(~np.isfinite(time_index) | (time_index != np.round(time_index)))
    if bad_time.size:
        raise DataError(
            f"time_index does not parse as an integer: '{time_raw.iloc[bad_time[0]]}'",
            line=_line_of(bad_time[0]),
        )
    time_index = time_index.astype(int)
    off_grid = np.flatnonzero((time_index < 0) | (time_index > grid.num_intervals))
    if off_grid.size:
        raise DataError(
            f"time_index {time_index[off_grid[0]]} outside grid 0..{grid.num_intervals}",
            line=_line_of(off_grid[0]),
        )

    speed_raw = frame[schema.speed_column].str.strip()
    speed = pd.to_numeric(speed_raw, errors="coerce").to_numpy(dtype=float)
    blank = (speed_raw == "").to_numpy()
    unparseable = np.flatnonzero(~blank & ~np.isfinite(speed))
    if unparseable.size:
        raise DataError(
            f"speed does not parse as a finite number: '{speed_raw.iloc[unparseable[0]]}'",
            line=_line_of(unparseable[0]),
        )
    # blanks and non-positive readings are sensor outages
    speed[blank | (speed <= 0)] = np.nan

    keys = pd.DataFrame({"day": days, "sensor": sensors, "t": time_index})
    duplicated = np.flatnonzero(keys.duplicated().to_numpy())
    if duplicated.size:
        raise DataError("Duplicate (day, sensor_id, time_index) cell", line=_line_of(duplicated[0]))

    day_labels = sorted(days.unique())
    day_pos = {label: d for d, label in enumerate(day_labels)}
    cube = np.full((len(day_labels), layout.num_sensors, grid.num_steps), np.nan)
    cube[days.map(day_pos).to_numpy(), sensors.map(sensor_index).to_numpy(), time_index] = speed

    report = IngestReport()
    kept: List[DayVelocityMatrix] = []
    for label, values in zip(day_labels, cube):
        observed = np.isfinite(values)
        missing_fraction = 1.0 - observed.mean()
        if missing_fraction > schema.max_missing_fraction:
            logger.warning(f"Rejecting day {label}: {missing_fraction:.1%} of cells missing")
            report.rejected.append(
                {"day": label, "reason": "too many missing cells", "missing_fraction": round(missing_fraction, 6)}
            )
            continue
        empty_rows = np.flatnonzero(~observed.any(axis=1))
        if empty_rows.size:
            sensor_id = layout.sensor_ids[empty_rows[0]]
            logger.warning(f"Rejecting day {label}: sensor {sensor_id} has no observations")
            report.rejected.append(
                {"day": label, "reason": f"sensor {sensor_id} has no observations",
                 "missing_fraction": round(missing_fraction, 6)}
            )
            continue
        filled = np.vstack([impute_row(row) for row in values])
        day = DayVelocityMatrix(day_id=label, values=filled, mask=observed)
        kept.append(day)
        report.days_kept.append(label)
        if day.imputed_count:
            report.imputed_cells[label] = day.imputed_count

    logger.info(
        f"Loaded {len(kept)} days ({len(report.rejected)} rejected, "
        f"{sum(report.imputed_cells.values())} cells imputed) from {speed_file}"
    )
    return IngestResult(dayset=DaySet(kept), layout=layout, report=report)


def write_dataset(
    dayset: DaySet,
    layout: SensorLayout,
    speed_file: Union[str, Path],
    layout_file: Optional[Union[str, Path]] = None,
) -> None:
    """Write the canonical CSV pair; every cell of every day is written."""
    if len(dayset):
        dayset.check_shape(TimeGrid(num_steps=dayset.shape[1]), layout)
    rows = []
    for day in dayset:
        num_points = day.num_points
        for m, sensor_id in enumerate(layout.sensor_ids):
            rows.append(
                pd.DataFrame(
                    {
                        "day": day.day_id,
                        "sensor_id": sensor_id,
                        "time_index": np.arange(num_points),
                        "speed_mph": day.values[m],
                    }
                )
            )
    frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=SPEED_HEADER)
    Path(speed_file).parent.mkdir(parents=True, exist_ok=True)
    frame[SPEED_HEADER].to_csv(speed_file, index=False, float_format="%.17g")
    if layout_file is not None:
        write_layout(layout, layout_file)


def write_layout(layout: SensorLayout, layout_file: Union[str, Path]) -> None:
    Path(layout_file).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"sensor_id": layout.sensor_ids, "milepost_miles": layout.positions})[LAYOUT_HEADER].to_csv(
        layout_file, index=False, float_format="%.17g"
    )


def split_dataset(
    dayset: DaySet, fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)
) -> Tuple[DaySet, DaySet, DaySet]:
    """
    Chronological train/validation/test split; train gets the earliest days.

    Part sizes are floor(n * fraction) for train and validation, the rest goes to
    test. A part that would come out empty borrows one day from train.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ParameterError(f"Need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"Fractions must sum to 1, got {sum(fractions)}")
    n = len(dayset)
    if n < 3:
        raise ParameterError(f"Need at least 3 days to split, got {n}")
    n_train = int(np.floor(n * fractions[0] + 1e-9))
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = n - n_train - n_val
    if n_val == 0:
        n_train, n_val = n_train - 1, 1
    if n_test == 0:
        n_train, n_test = n_train - 1, 1
    if n_train < 1:
        raise ParameterError(f"Fractions {fractions} leave no training days out of {n}")
    return dayset[:n_train], dayset[n_train:n_train + n_val], dayset[n_train + n_val:]


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """
    Ground truth for a synthetic corridor.

    Args:
        transitions: K x M x M matrices H_k; the grid has K+1 points
        num_days: number of days D to simulate
        sigma: standard deviation of the per-step Gaussian noise (mph)
        v0_range: initial speeds are drawn uniformly from this interval
        seed: RNG seed; equal specs give identical day sets
        spectral_bound: largest allowed spectral radius of any H_k
        sanity_bound: largest allowed simulated speed (mph)
        start_date: ISO date of the first day; days are consecutive
    """

    transitions: np.ndarray
    num_days: int
    sigma: float = 1.0
    v0_range: Tuple[float, float] = (20.0, 70.0)
    seed: int = 0
    spectral_bound: float = 1.1
    sanity_bound: float = 200.0
    start_date: str = "2012-01-02"

    def __post_init__(self):
        transitions = np.array(self.transitions, dtype=float)
        if transitions.ndim != 3 or transitions.shape[1] != transitions.shape[2]:
            raise DimensionError(f"transitions must be K x M x M, got shape {transitions.shape}")
        transitions.setflags(write=False)
        object.__setattr__(self, "transitions", transitions)
        if self.num_days < 1:
            raise ParameterError(f"num_days must be positive, got {self.num_days}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma}")
        lo, hi = self.v0_range
        if not 0 < lo <= hi:
            raise ParameterError(f"v0_range must satisfy 0 < low <= high, got {self.v0_range}")
        radii = np.abs(np.linalg.eigvals(transitions)).max(axis=1)
        worst = int(np.argmax(radii))
        if radii[worst] > self.spectral_bound + 1e-12:
            raise UnstableSpecError(
                f"Spectral radius {radii[worst]:.4f} of H_{worst} exceeds bound {self.spectral_bound}",
                k=worst,
            )

    @property
    def num_sensors(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_intervals(self) -> int:
        return self.transitions.shape[0]


def profile_transitions(
    num_sensors: int,
    num_intervals: int,
    coupling: float = 0.02,
    dip_depth: float = 0.25,
    dip_center: float = 0.5,
    dip_width: float = 0.15,
) -> np.ndarray:
    """
    Transition matrices of a corridor with a smooth mid-window slowdown.

    Each H_k is a row-stochastic neighbour-averaging matrix scaled by
    m(k+1)/m(k), where m is a speed profile dipping by `dip_depth` around
    `dip_center` (fraction of the window). The spectral radius of H_k is that ratio.
    """
    if not 0 <= coupling <= 1:
        raise ParameterError(f"coupling must lie in [0, 1], got {coupling}")
    if not 0 <= dip_depth < 1:
        raise ParameterError(f"dip_depth must lie in [0, 1), got {dip_depth}")
    eye = np.eye(num_sensors)
    if num_sensors > 1:
        adjacency = np.eye(num_sensors, k=1) + np.eye(num_sensors, k=-1)
        neighbours = adjacency / adjacency.sum(axis=1, keepdims=True)
        mixing = (1.0 - coupling) * eye + coupling * neighbours
    else:
        mixing = eye
    phase = np.arange(num_intervals + 1) / num_intervals
    profile = 1.0 - dip_depth * np.exp(-0.5 * ((phase - dip_center) / dip_width) ** 2)
    scale = profile[1:] / profile[:-1]
    return scale[:, None, None] * mixing[None, :, :]


def generate_synthetic(spec: SyntheticSpec) -> Tuple[DaySet, np.ndarray]:
    """
    Simulate days forward with v_{k+1} = H_k v_k + n_k, n_k ~ N(0, sigma^2 I).

    Returns:
        (DaySet of spec.num_days consecutive dates, the K x M x M ground truth)

    Raises:
        UnstableSpecError: a simulated speed leaves (0, sanity_bound]
    """
    rng = np.random.default_rng(spec.seed)
    num_sensors, num_intervals = spec.num_sensors, spec.num_intervals
    lo, hi = spec.v0_range
    cube = np.empty((spec.num_days, num_sensors, num_intervals + 1))
    cube[:, :, 0] = rng.uniform(lo, hi, size=(spec.num_days, num_sensors))
    for k in range(num_intervals):
        noise = spec.sigma * rng.standard_normal((spec.num_days, num_sensors))
        cube[:, :, k + 1] = cube[:, :, k] @ spec.transitions[k].T + noise

    if np.any(cube <= 0) or np.any(cube > spec.sanity_bound):
        d, m, k = np.argwhere((cube <= 0) | (cube > spec.sanity_bound))[0]
        raise UnstableSpecError(
            f"Synthetic speed {cube[d, m, k]:.3f} mph leaves (0, {spec.sanity_bound}] "
            f"(day {d}, sensor {m}, index {k})",
            day=int(d), sensor=int(m), k=int(k),
        )

    start = datetime.date.fromisoformat(spec.start_date)
    days = [
        DayVelocityMatrix(day_id=(start + datetime.timedelta(days=d)).isoformat(), values=cube[d])
        for d in range(spec.num_days)
    ]
    logger.info(
        f"Generated {spec.num_days} synthetic days (M={num_sensors}, K={num_intervals}, sigma={spec.sigma})"
    )
    return DaySet(days), spec.transitions
