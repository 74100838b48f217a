#!/usr/bin/env python3
"""
evaluator.py - Travel Time Evaluation Harness

WHY THIS SCRIPT EXISTS:
- Scores predictors by the travel time a vehicle would really have experienced
- Sweeps departure times and prediction horizons over test days, grouped by peak/off-peak periods
- Reproduces the (rho, lambda) validation table used to pick hyper-parameters

KEY ARCHITECTURAL DECISIONS:
- NO FUTURE DATA: a predictor only ever receives speeds observed through the current index k
- NO SELF-REFERENCE: predictors with a day history drop the test day from it via for_day
- DOUBLING EXTENT: a field too short for a trip is re-requested with twice the extent,
  up to the end of the grid, before the trip is declared unevaluable
- DAY-LEVEL PARALLELISM: each test day is one work item; results are reassembled in input order
- UNSATISFIABLE TRIPS ARE SKIPPED: trips whose observed travel time runs past the end of the
  day are counted apart from predictor failures
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core import DayVelocityMatrix, DaySet, PeriodMask, SensorLayout, TimeGrid
from dlm import DlmModel, Hyperparams, fit_batch
from errors import DataError, HorizonExceededError, ParameterError
from predict import PostProcessParams, forecast_field
from traveltime import DEFAULT_DELTA_X, GriddedField, interpolate_field, travel_time

logger = logging.getLogger(__name__)

DAY_WINDOW = (360.0, 1260.0)
DEFAULT_HORIZONS = (0, 15, 30, 60)
DEFAULT_RHO_SET = (0, 0.1, 0.3, 1, 3, 10, 30, 100, 300, 1000, 3000, 10000)
DEFAULT_LAMBDA_SET = (1, 0.999, 0.995, 0.99, 0.95)


# =============================================================================
# METRICS
# =============================================================================


def ape(actual: float, predicted: float) -> float:
    """Absolute percentage error 100 * |(a - p) / a|."""
    if not actual > 0:
        raise ParameterError(f"Actual travel time must be positive, got {actual}")
    return 100.0 * abs((actual - predicted) / actual)


def mape(apes: Iterable[float]) -> float:
    """Arithmetic mean of absolute percentage errors."""
    values = [float(a) for a in apes]
    if not values:
        raise ParameterError("MAPE of an empty set is undefined")
    return float(np.mean(values))


def improvement_rate(mape_method: float, mape_inst: float) -> float:
    """1 - MAPE_method / MAPE_inst; negative when the method is worse than instantaneous."""
    if not mape_inst > 0:
        raise ParameterError(f"Instantaneous MAPE must be positive, got {mape_inst}")
    return 1.0 - mape_method / mape_inst


# =============================================================================
# PERIOD MASKS
# =============================================================================


def _i5s_peak(weekday: int, minute: float) -> bool:
    return weekday < 5 and (360 <= minute < 600 or 900 <= minute < 1140)


def _i210e_peak(weekday: int, minute: float) -> bool:
    return weekday != 6 and 780 <= minute < 1200


_PEAK_PREDICATES = {"i5s": _i5s_peak, "i210e": _i210e_peak}


def period_masks_builtin(freeway: str) -> Tuple[PeriodMask, PeriodMask]:
    """
    Peak and off-peak masks of a studied freeway.

    i5s: weekdays 6-10 AM and 3-7 PM. i210e: 1-8 PM every day except Sunday.
    Off-peak is the rest of the 6 AM - 9 PM window.
    """
    key = freeway.lower().replace("-", "")
    if key not in _PEAK_PREDICATES:
        raise ParameterError(f"Unknown freeway '{freeway}', expected one of {sorted(_PEAK_PREDICATES)}")
    peak = PeriodMask("peak", _PEAK_PREDICATES[key])
    return peak, peak.complement("offpeak", DAY_WINDOW)


def all_mask() -> PeriodMask:
    lo, hi = DAY_WINDOW
    return PeriodMask("all", lambda weekday, minute: lo <= minute <= hi)


def masks_for(freeway: str) -> List[PeriodMask]:
    """peak, offpeak and all, in that order."""
    return [*period_masks_builtin(freeway), all_mask()]


# =============================================================================
# TRIPS AND PREDICTORS
# =============================================================================


@dataclass(frozen=True)
class TripSpec:
    """
    A vehicle departing h minutes after the current index k, from x0 to x_dest.

    departure_index = k + h / step_minutes must lie on the grid.
    """

    k: int
    x0: float
    x_dest: float
    horizon_minutes: float
    departure_index: int

    @classmethod
    def make(cls, grid: TimeGrid, k: int, x0: float, x_dest: float, horizon_minutes: float) -> "TripSpec":
        grid.check_index(k)
        departure = k + grid.steps_for(horizon_minutes)
        grid.check_index(departure)
        if not x0 < x_dest:
            raise ParameterError(f"Trips run downstream: need x0 < x_dest, got {x0} >= {x_dest}")
        return cls(k=k, x0=x0, x_dest=x_dest, horizon_minutes=float(horizon_minutes), departure_index=departure)


def default_trips(
    grid: TimeGrid,
    layout: SensorLayout,
    horizons: Sequence[float] = DEFAULT_HORIZONS,
    x0: Optional[float] = None,
    x_dest: Optional[float] = None,
) -> List[TripSpec]:
    """Full-corridor trips departing at every grid index before the last, for every horizon."""
    x0 = layout.first if x0 is None else x0
    x_dest = layout.last if x_dest is None else x_dest
    trips = []
    for h in horizons:
        offset = grid.steps_for(h)
        for departure in range(offset, grid.num_intervals):
            trips.append(TripSpec.make(grid, departure - offset, x0, x_dest, h))
    return trips


class Predictor(Protocol):
    name: str

    def forecast(self, observed: np.ndarray, k: int, steps: int) -> GriddedField:
        """Field over grid indices k..k+steps built from observed[:, :k+1] only."""


class DlmPredictor:
    """Post-processed DLM forecasts starting from the observation at k."""

    name = "dlm"

    def __init__(
        self,
        model: DlmModel,
        params: PostProcessParams = PostProcessParams(),
        layout: Optional[SensorLayout] = None,
    ):
        if model.layout is None:
            if layout is None:
                raise ParameterError("DLM predictor needs a sensor layout")
            model = replace(model, layout=layout)
        self.model = model
        self.params = params

    def forecast(self, observed: np.ndarray, k: int, steps: int) -> GriddedField:
        return forecast_field(self.model, np.asarray(observed)[:, : k + 1], k, steps, self.params)


class ExternalPredictions:
    """
    Travel times predicted elsewhere (SVR, ANN, ...), read from a CSV with columns
    day, departure_index, horizon_minutes, predicted_minutes.
    """

    COLUMNS = ("day", "departure_index", "horizon_minutes", "predicted_minutes")

    def __init__(self, table: Dict[Tuple[str, int, float], float], name: str = "external"):
        self.table = table
        self.name = name

    @classmethod
    def from_csv(cls, path: Union[str, Path], name: str = "external") -> "ExternalPredictions":
        frame = pd.read_csv(path, dtype={"day": str})
        missing = [c for c in cls.COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"External predictions {path} lack columns {missing}", line=1)
        table = {}
        for position, row in enumerate(frame.itertuples(index=False)):
            predicted = float(row.predicted_minutes)
            if not np.isfinite(predicted) or predicted <= 0:
                raise DataError(f"Predicted travel time must be positive in {path}", line=position + 2)
            table[(str(row.day), int(row.departure_index), float(row.horizon_minutes))] = predicted
        logger.info(f"Loaded {len(table)} external predictions '{name}' from {path}")
        return cls(table, name)

    def lookup(self, day_id: str, trip: TripSpec) -> Optional[float]:
        return self.table.get((day_id, trip.departure_index, trip.horizon_minutes))


# =============================================================================
# REPORT
# =============================================================================


@dataclass(frozen=True)
class TripRecord:
    predictor: str
    day: str
    k: int
    departure_index: int
    departure_minute: float
    horizon_minutes: float
    x0: float
    x_dest: float
    actual_minutes: float
    predicted_minutes: float
    ape: float
    masks: Tuple[str, ...]


@dataclass
class EvalReport:
    """Per-trip records plus the bookkeeping needed to aggregate them by horizon and period."""

    records: List[TripRecord] = field(default_factory=list)
    mask_names: List[str] = field(default_factory=list)
    unevaluable: Dict[str, int] = field(default_factory=dict)
    skipped: int = 0
    baseline: str = "inst"

    @property
    def unevaluable_total(self) -> int:
        return sum(self.unevaluable.values())

    def merge(self, other: "EvalReport") -> "EvalReport":
        names = self.mask_names + [m for m in other.mask_names if m not in self.mask_names]
        unevaluable = dict(self.unevaluable)
        for name, count in other.unevaluable.items():
            unevaluable[name] = unevaluable.get(name, 0) + count
        return EvalReport(
            records=self.records + other.records,
            mask_names=names,
            unevaluable=unevaluable,
            skipped=max(self.skipped, other.skipped),
            baseline=self.baseline,
        )

    def aggregates(self) -> List[Dict[str, object]]:
        """count, MAPE and median APE per (predictor, horizon, mask), in first-seen order."""
        groups: Dict[Tuple[str, float, str], List[float]] = {}
        for record in self.records:
            for mask in record.masks:
                groups.setdefault((record.predictor, record.horizon_minutes, mask), []).append(record.ape)
        rows = []
        for (predictor, horizon, mask), apes in groups.items():
            rows.append(
                {
                    "predictor": predictor,
                    "horizon_minutes": horizon,
                    "mask": mask,
                    "count": len(apes),
                    "mape": mape(apes),
                    "median_ape": float(np.median(apes)),
                }
            )
        return rows

    def mape_of(self, predictor: str, horizon_minutes: Optional[float] = None, mask: str = "all") -> float:
        apes = [
            r.ape
            for r in self.records
            if r.predictor == predictor
            and mask in r.masks
            and (horizon_minutes is None or r.horizon_minutes == float(horizon_minutes))
        ]
        return mape(apes)

    def improvement_rates(self) -> List[Dict[str, object]]:
        """Each non-baseline group against the baseline group with the same horizon and mask."""
        rows = self.aggregates()
        base = {(r["horizon_minutes"], r["mask"]): r["mape"] for r in rows if r["predictor"] == self.baseline}
        rates = []
        for row in rows:
            key = (row["horizon_minutes"], row["mask"])
            if row["predictor"] == self.baseline or key not in base or not base[key] > 0:
                continue
            rates.append(
                {
                    "predictor": row["predictor"],
                    "horizon_minutes": row["horizon_minutes"],
                    "mask": row["mask"],
                    "improvement_rate": improvement_rate(row["mape"], base[key]),
                }
            )
        return rates

    def to_dict(self) -> Dict[str, object]:
        return {
            "records": len(self.records),
            "skipped_unsatisfiable": self.skipped,
            "unevaluable": dict(sorted(self.unevaluable.items())),
            "baseline": self.baseline,
            "aggregates": self.aggregates(),
            "improvement_rates": self.improvement_rates(),
        }

    def to_json(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for record in self.records:
            row = asdict(record)
            row["masks"] = ";".join(record.masks)
            rows.append(row)
        return pd.DataFrame(rows, columns=[f.name for f in TripRecord.__dataclass_fields__.values()])

    def to_csv(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)


# =============================================================================
# EVALUATION
# =============================================================================


def _forecast_travel_time(
    predictor: Predictor,
    day: DayVelocityMatrix,
    grid: TimeGrid,
    trip: TripSpec,
    delta_x: float,
    initial_extent_steps: int,
) -> Optional[float]:
    """Predicted minutes, or None when even an end-of-grid field is too short."""
    observed = day.values[:, : trip.k + 1].copy()
    offset = trip.departure_index - trip.k
    limit = grid.num_intervals - trip.k
    extent = min(max(offset + initial_extent_steps, 1), limit)
    t0 = grid.time_of(trip.departure_index)
    while True:
        field_fn = interpolate_field(predictor.forecast(observed, trip.k, extent))
        try:
            return travel_time(field_fn, t0, trip.x0, trip.x_dest, delta_x)
        except HorizonExceededError:
            if extent >= limit:
                return None
            extent = min(2 * extent, limit)


def _evaluate_day(
    predictor: Union[Predictor, ExternalPredictions],
    day: DayVelocityMatrix,
    layout: SensorLayout,
    grid: TimeGrid,
    trips: Sequence[TripSpec],
    masks: Sequence[PeriodMask],
    delta_x: float,
    initial_extent_steps: int,
) -> Tuple[List[TripRecord], int, int]:
    if hasattr(predictor, "for_day"):
        predictor = predictor.for_day(day.day_id)
    observed_fn = interpolate_field(GriddedField.from_day(day, grid, layout))
    weekday = day.weekday
    actual_cache: Dict[Tuple[int, float, float], Optional[float]] = {}
    records, unevaluable, skipped = [], 0, 0
    for trip in trips:
        key = (trip.departure_index, trip.x0, trip.x_dest)
        if key not in actual_cache:
            try:
                actual_cache[key] = travel_time(
                    observed_fn, grid.time_of(trip.departure_index), trip.x0, trip.x_dest, delta_x
                )
            except HorizonExceededError:
                actual_cache[key] = None
        actual = actual_cache[key]
        if actual is None:
            skipped += 1
            continue

        if isinstance(predictor, ExternalPredictions):
            predicted = predictor.lookup(day.day_id, trip)
        else:
            predicted = _forecast_travel_time(predictor, day, grid, trip, delta_x, initial_extent_steps)
        if predicted is None:
            unevaluable += 1
            continue

        minute = grid.time_of(trip.departure_index)
        records.append(
            TripRecord(
                predictor=predictor.name,
                day=day.day_id,
                k=trip.k,
                departure_index=trip.departure_index,
                departure_minute=minute,
                horizon_minutes=trip.horizon_minutes,
                x0=trip.x0,
                x_dest=trip.x_dest,
                actual_minutes=actual,
                predicted_minutes=predicted,
                ape=ape(actual, predicted),
                masks=tuple(m.name for m in masks if m.contains(weekday, minute)),
            )
        )
    return records, unevaluable, skipped


def evaluate(
    predictor: Union[Predictor, ExternalPredictions],
    test: DaySet,
    layout: SensorLayout,
    grid: TimeGrid,
    trips: Sequence[TripSpec],
    masks: Sequence[PeriodMask],
    delta_x: float = DEFAULT_DELTA_X,
    initial_extent_steps: int = 12,
    workers: int = 1,
    baseline: str = "inst",
) -> EvalReport:
    """
    Score one predictor on every (test day, trip).

    Args:
        predictor: object with `name` and `forecast(observed, k, steps)`, or ExternalPredictions
            A predictor offering `for_day(day_id)` is narrowed to each test day first
        test: held-out days with ISO-date ids (masks need the weekday)
        trips: from default_trips or TripSpec.make
        masks: period masks recorded on each trip by its departure instant
        workers: threads evaluating days concurrently

    Returns:
        EvalReport; trips the predictor could not cover are counted in `unevaluable`
    """
    if len(test) == 0:
        raise ParameterError("Evaluation needs at least one test day")
    test.check_shape(grid, layout)
    trips = list(trips)

    def run(day: DayVelocityMatrix):
        return _evaluate_day(predictor, day, layout, grid, trips, masks, delta_x, initial_extent_steps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, test))
    else:
        results = [run(day) for day in test]

    report = EvalReport(mask_names=[m.name for m in masks], baseline=baseline)
    unevaluable = 0
    for records, missed, skipped in results:
        report.records.extend(records)
        unevaluable += missed
        report.skipped += skipped
    report.unevaluable[predictor.name] = unevaluable
    if unevaluable:
        logger.warning(f"{predictor.name}: {unevaluable} trips unevaluable even with end-of-grid fields")
    logger.info(
        f"Evaluated {predictor.name} on {len(test)} days: {len(report.records)} trips, {report.skipped} skipped"
    )
    return report


# =============================================================================
# GRID SEARCH
# =============================================================================


@dataclass
class GridSearchResult:
    """Validation MAPE per (rho, lambda); NaN where no trip fell in the selected mask."""

    rho_set: List[float]
    lambda_set: List[float]
    table: np.ndarray
    mask: str

    @property
    def best(self) -> Tuple[float, float]:
        if np.all(np.isnan(self.table)):
            raise DataError(f"No evaluable validation trips in mask '{self.mask}'")
        i, j = np.unravel_index(np.nanargmin(self.table), self.table.shape)
        return self.rho_set[i], self.lambda_set[j]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.table, columns=[str(lam) for lam in self.lambda_set])
        frame.insert(0, "rho", self.rho_set)
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)

    def to_dict(self) -> Dict[str, object]:
        rho, lam = self.best
        return {
            "mask": self.mask,
            "rho": self.rho_set,
            "lambda": self.lambda_set,
            "mape": [[None if np.isnan(v) else float(v) for v in row] for row in self.table],
            "best": {"regularization": rho, "forgetting_factor": lam},
        }


def grid_search(
    train: DaySet,
    val: DaySet,
    layout: SensorLayout,
    grid: TimeGrid,
    trips: Sequence[TripSpec],
    masks: Sequence[PeriodMask],
    rho_set: Sequence[float] = DEFAULT_RHO_SET,
    lambda_set: Sequence[float] = DEFAULT_LAMBDA_SET,
    mask: str = "peak",
    params: PostProcessParams = PostProcessParams(),
    delta_x: float = DEFAULT_DELTA_X,
    initial_extent_steps: int = 12,
    workers: int = 1,
) -> GridSearchResult:
    """
    Fit one model per (rho, lambda) on train and score DLM travel times on val.

    Every pair is fitted from scratch: lambda reweights every day, so fits do not share work.
    """
    if not rho_set or not lambda_set:
        raise ParameterError("Grid search needs non-empty rho and lambda sets")
    if mask not in [m.name for m in masks]:
        raise ParameterError(f"Mask '{mask}' is not among {[m.name for m in masks]}")
    pairs = [(rho, lam) for rho in rho_set for lam in lambda_set]
    trips = list(trips)

    def score(pair: Tuple[float, float]) -> float:
        rho, lam = pair
        model = fit_batch(train, Hyperparams(rho, lam), grid=grid, layout=layout)
        report = evaluate(
            DlmPredictor(model, params), val, layout, grid, trips, masks, delta_x, initial_extent_steps
        )
        apes = [r.ape for r in report.records if mask in r.masks]
        value = mape(apes) if apes else float("nan")
        logger.info(f"rho={rho}, lambda={lam}: validation MAPE {value:.4f} on {len(apes)} '{mask}' trips")
        return value

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, pairs))
    else:
        scores = [score(pair) for pair in pairs]

    table = np.array(scores, dtype=float).reshape(len(rho_set), len(lambda_set))
    return GridSearchResult(rho_set=list(rho_set), lambda_set=list(lambda_set), table=table, mask=mask)


# TEST SUITE - metric hand cases
if __name__ == "__main__":
    print("Test 1: APE")
    assert ape(20, 18) == 10.0 and abs(ape(10, 13) - 30.0) < 1e-12
    print(" PASS: ape(20, 18) = 10, ape(10, 13) = 30\n")

    print("Test 2: improvement rate")
    assert abs(improvement_rate(4.4, 10) - 0.56) < 1e-12
    assert improvement_rate(11, 10) < 0
    print(" PASS: 0.56 and negative when worse\n")

    print("Test 3: I5-S Tuesday 8 AM is peak")
    peak, offpeak = period_masks_builtin("i5s")
    assert peak.contains(1, 480) and not offpeak.contains(1, 480)
    print(" PASS\n")
