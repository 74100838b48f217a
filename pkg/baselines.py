#!/usr/bin/env python3
"""
baselines.py - Reference Predictors

WHY THIS SCRIPT EXISTS:
- The DLM is only worth its training cost if it beats simple predictors
- Instantaneous travel time assumes the current speeds never change
- k-nearest-neighbour prediction replays the rest of the most similar past days

KEY ARCHITECTURAL DECISIONS:
- SAME SHAPE AS THE DLM: every predictor returns a GriddedField from t_k onward,
  so evaluator.py scores them with the same travel-time integration
- FULL-WINDOW DISTANCE: all sensors and all indices from day start through k, unweighted
- DETERMINISTIC TIES: equal distances go to the earlier day_id
- NO SELF-NEIGHBOURS: the day under evaluation never sits in its own neighbour pool
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core import DaySet, SensorLayout, TimeGrid
from errors import DataError, DimensionError, IndexRangeError, ParameterError
from traveltime import GriddedField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KnnConfig:
    """
    Args:
        k: number of neighbours averaged, >= 1
        window: number of most recent indices entering the distance; None means 0..k
    """

    k: int = 1
    window: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"k-NN needs k >= 1, got {self.k}")
        if self.window is not None and self.window < 1:
            raise ParameterError(f"k-NN window must be >= 1 index, got {self.window}")


def instantaneous_field(
    v_now: np.ndarray,
    grid: TimeGrid,
    extent: int,
    layout: SensorLayout,
    start_index: int = 0,
) -> GriddedField:
    """
    Field whose every column equals the current speeds.

    Args:
        v_now: M current speeds
        extent: number of time columns, >= 2
        start_index: grid index of the first column
    """
    vector = np.asarray(v_now, dtype=float).reshape(-1)
    if vector.size != layout.num_sensors:
        raise DimensionError(f"Velocity vector has {vector.size} entries, layout has {layout.num_sensors} sensors")
    if not np.all(np.isfinite(vector)) or np.any(vector <= 0):
        raise DataError("Current speeds must be finite and positive")
    if extent < 2:
        raise ParameterError(f"A field needs an extent of at least 2 columns, got {extent}")
    times = grid.start_minute + grid.step_minutes * (start_index + np.arange(extent))
    return GriddedField(times=times, layout=layout, values=np.tile(vector[:, None], (1, extent)))


def knn_predict(train: DaySet, partial_day: np.ndarray, cfg: KnnConfig = KnnConfig()) -> np.ndarray:
    """
    Average of the remaining columns of the cfg.k training days closest to partial_day.

    Args:
        train: historical days
        partial_day: M x (k+1) speeds observed through index k

    Returns:
        M x (K - k) speeds for indices k+1..K

    Raises:
        ParameterError: empty training set or cfg.k larger than it
        DimensionError: partial_day does not fit the training days
    """
    if len(train) == 0:
        raise ParameterError("k-NN needs a non-empty training set")
    if cfg.k > len(train):
        raise ParameterError(f"k-NN asked for {cfg.k} neighbours from {len(train)} training days")
    partial = np.asarray(partial_day, dtype=float)
    num_sensors, num_points = train.shape
    if partial.ndim != 2 or partial.shape[0] != num_sensors or not 1 <= partial.shape[1] <= num_points:
        raise DimensionError(f"Partial day shape {partial.shape} does not fit training days ({num_sensors}, {num_points})")
    k = partial.shape[1] - 1
    lo = 0 if cfg.window is None else max(0, k + 1 - cfg.window)

    history = train.stack()
    distances = np.linalg.norm((history[:, :, lo : k + 1] - partial[None, :, lo:]).reshape(len(train), -1), axis=1)
    day_ids = train.day_ids
    ranked = sorted(range(len(train)), key=lambda j: (distances[j], day_ids[j]))
    chosen = ranked[: cfg.k]
    logger.debug(f"k-NN at k={k}: neighbours {[day_ids[j] for j in chosen]}")
    return history[chosen, :, k + 1 :].mean(axis=0)


class InstantaneousPredictor:
    """Current speeds held constant over the whole prediction extent."""

    name = "inst"

    def __init__(self, grid: TimeGrid, layout: SensorLayout):
        self.grid = grid
        self.layout = layout

    def forecast(self, observed: np.ndarray, k: int, steps: int) -> GriddedField:
        observed = np.asarray(observed, dtype=float)
        return instantaneous_field(observed[:, k], self.grid, steps + 1, self.layout, start_index=k)


class KnnPredictor:
    """Observed speeds at k followed by the k-NN average of the rest of the day."""

    name = "knn"

    def __init__(self, train: DaySet, grid: TimeGrid, layout: SensorLayout, cfg: KnnConfig = KnnConfig()):
        if cfg.k > len(train):
            raise ParameterError(f"k-NN asked for {cfg.k} neighbours from {len(train)} training days")
        self.train = train
        self.grid = grid
        self.layout = layout
        self.cfg = cfg

    def for_day(self, day_id: str) -> "KnnPredictor":
        """Predictor whose neighbour pool leaves out the day being predicted."""
        if day_id not in self.train.day_ids:
            return self
        pool = DaySet(d for d in self.train if d.day_id != day_id)
        return KnnPredictor(pool, self.grid, self.layout, self.cfg)

    def forecast(self, observed: np.ndarray, k: int, steps: int) -> GriddedField:
        observed = np.asarray(observed, dtype=float)
        if steps < 1 or k + steps > self.grid.num_intervals:
            raise IndexRangeError(f"k-NN forecast k={k}, steps={steps} runs past K={self.grid.num_intervals}", k=k)
        remaining = knn_predict(self.train, observed[:, : k + 1], self.cfg)
        times = self.grid.start_minute + self.grid.step_minutes * np.arange(k, k + steps + 1)
        return GriddedField(
            times=times,
            layout=self.layout,
            values=np.column_stack([observed[:, k], remaining[:, :steps]]),
        )
