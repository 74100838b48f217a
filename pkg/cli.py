#!/usr/bin/env python3
"""
cli.py - Command-Line Front End

WHY THIS SCRIPT EXISTS:
- Wires ingestion, training, updates, prediction, travel time, evaluation and grid search
  into one batch tool whose outputs are plot-ready CSV/JSON files
- Every run is reproducible from the config, the preset and the input files

KEY ARCHITECTURAL DECISIONS:
- DATASET DIRECTORIES: a dataset is a directory holding speeds.csv and layout.csv
- EXIT CODES: 0 success, 2 usage/input error, 3 numerical failure, 4 unevaluable trips remain
- ERRORS AS JSON: failures print {"error", "message", ...context} on stderr
- RUN LEDGER: every subcommand records STARTED and COMPLETED/FAILED in logs/activity.db
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from activity_log import ActivityLog
from baselines import InstantaneousPredictor, KnnConfig, KnnPredictor
from config_loader import grid_from_config, load_config, postprocess_from_config, schema_from_config
from core import DaySet, DayVelocityMatrix, SensorLayout
from dlm import DlmModel, Hyperparams, fit_batch, load_model, save_model, update_with_day
from errors import (
    ConfigError,
    DataError,
    DimensionError,
    DlmError,
    ExtentError,
    HorizonExceededError,
    IndexRangeError,
    ModelFormatError,
    ParameterError,
    RankDeficiencyError,
    UnstableSpecError,
)
from evaluator import (
    DlmPredictor,
    ExternalPredictions,
    default_trips,
    evaluate,
    grid_search,
    masks_for,
)
from ingest import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_layout,
    load_speeds,
    profile_transitions,
    split_dataset,
    write_dataset,
)
from predict import forecast_field, predict_steps
from traveltime import GriddedField, interpolate_field, read_field_csv, travel_time, write_field_csv

logger = logging.getLogger("cli")

SPEEDS_FILE = "speeds.csv"
LAYOUT_FILE = "layout.csv"
TRANSITIONS_FILE = "transitions.npz"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_UNEVALUABLE = 4

_INPUT_ERRORS = (
    ParameterError,
    DimensionError,
    DataError,
    IndexRangeError,
    ExtentError,
    ModelFormatError,
    ConfigError,
    FileNotFoundError,
)
_NUMERICAL_ERRORS = (RankDeficiencyError, UnstableSpecError)


class UnevaluableTrips(Exception):
    """Raised after the report is written when some trips stayed unevaluable."""

    def __init__(self, summary: Dict[str, Any]):
        super().__init__("unevaluable trips remain")
        self.summary = summary


# =============================================================================
# HELPERS
# =============================================================================


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _load_data_dir(data_dir: str, config: Dict[str, Any]):
    directory = Path(data_dir)
    return load_dataset(
        directory / SPEEDS_FILE, directory / LAYOUT_FILE, schema_from_config(config), grid_from_config(config)
    )


def _select_part(dayset: DaySet, part: str, config: Dict[str, Any]) -> DaySet:
    if part == "all":
        return dayset
    train, val, test = split_dataset(dayset, tuple(config["ingest"]["split"]))
    return {"train": train, "val": val, "test": test, "train+val": train.concat(val)}[part]


def _pick_day(dayset: DaySet, day_id: Optional[str]) -> DayVelocityMatrix:
    if len(dayset) == 0:
        raise DataError("Day file holds no usable day")
    if day_id is None:
        return dayset[len(dayset) - 1]
    for day in dayset:
        if day.day_id == day_id:
            return day
    raise ParameterError(f"Day '{day_id}' not in day file", day=day_id)


def _model_with_layout(path: str) -> DlmModel:
    model = load_model(path)
    if model.layout is None:
        raise ParameterError(f"Model {path} carries no sensor layout")
    return model


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _threads(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    return max(1, int(args.threads if args.threads is not None else config["performance"]["threads"]))


# =============================================================================
# SUBCOMMANDS
# =============================================================================


def cmd_ingest(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    result = load_dataset(args.speeds, args.layout, schema_from_config(config), grid_from_config(config))
    out = Path(args.out)
    write_dataset(result.dayset, result.layout, out / SPEEDS_FILE, out / LAYOUT_FILE)
    return {"output": str(out), "num_sensors": result.layout.num_sensors, **result.report.to_dict()}


def cmd_synth(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    section = dict(config["synthetic"])
    for key in ("num_days", "num_sensors", "seed"):
        if getattr(args, key) is not None:
            section[key] = getattr(args, key)
    if args.sigma is not None:
        section["sigma"] = args.sigma
    grid = grid_from_config(config)
    transitions = profile_transitions(
        int(section["num_sensors"]),
        grid.num_intervals,
        coupling=float(section["coupling"]),
        dip_depth=float(section["dip_depth"]),
    )
    spec = SyntheticSpec(
        transitions=transitions,
        num_days=int(section["num_days"]),
        sigma=float(section["sigma"]),
        v0_range=tuple(section["v0_range"]),
        seed=int(section["seed"]),
        spectral_bound=float(section["spectral_bound"]),
        sanity_bound=float(section["sanity_bound"]),
        start_date=str(section["start_date"]),
    )
    dayset, truth = generate_synthetic(spec)
    layout = SensorLayout.evenly_spaced(spec.num_sensors, float(section["sensor_spacing_miles"]))
    out = Path(args.out)
    write_dataset(dayset, layout, out / SPEEDS_FILE, out / LAYOUT_FILE)
    np.savez(out / TRANSITIONS_FILE, transitions=truth)
    return {
        "output": str(out),
        "days": len(dayset),
        "num_sensors": spec.num_sensors,
        "num_intervals": spec.num_intervals,
        "first_day": dayset.day_ids[0],
        "seed": spec.seed,
    }


def cmd_train(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    data = _load_data_dir(args.data, config)
    days = _select_part(data.dayset, args.part, config)
    hyper = Hyperparams(args.regularization, args.forgetting_factor)
    model = fit_batch(days, hyper, grid=grid_from_config(config), layout=data.layout)
    save_model(model, args.out)
    return {
        "model": args.out,
        "days_seen": model.days_seen,
        "num_sensors": model.num_sensors,
        "num_intervals": model.num_intervals,
        **hyper.to_dict(),
        "sha256": _file_digest(Path(args.out)),
    }


def cmd_update(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    model = _model_with_layout(args.model)
    before = model.days_seen
    new_days = load_speeds(args.day, model.layout, schema_from_config(config), model.grid).dayset
    if len(new_days) == 0:
        raise DataError(f"No usable day in {args.day}")
    for day in new_days:
        model = update_with_day(model, day)
    out = args.out or args.model
    save_model(model, out)
    return {
        "model": out,
        "days_added": new_days.day_ids,
        "days_seen_before": before,
        "days_seen": model.days_seen,
        "sha256": _file_digest(Path(out)),
    }


def cmd_predict(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    model = _model_with_layout(args.model)
    params = postprocess_from_config(config)
    day = _pick_day(load_speeds(args.day, model.layout, schema_from_config(config), model.grid).dayset, args.day_id)
    k = args.current_index
    model.grid.check_index(k)
    prediction = predict_steps(model, day.values[:, k], k, args.steps, params)
    field = forecast_field(model, day.values[:, : k + 1], k, args.steps, params)
    write_field_csv(field, model.grid, args.out)
    return {
        "output": args.out,
        "day": day.day_id,
        "current_index": k,
        "steps": args.steps,
        "saturated_cells": int(prediction.saturated.sum()),
    }


def cmd_travel_time(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    grid = grid_from_config(config)
    delta_x = args.delta_x if args.delta_x is not None else float(config["traveltime"]["delta_x"])
    if args.field:
        field = read_field_csv(args.field, grid)
        source = "field"
    elif args.model:
        model = _model_with_layout(args.model)
        grid = model.grid
        if args.day is None or args.current_index is None:
            raise ParameterError("--model needs --day and --current-index")
        day = _pick_day(load_speeds(args.day, model.layout, schema_from_config(config), grid).dayset, args.day_id)
        k = args.current_index
        steps = args.steps if args.steps is not None else grid.num_intervals - k
        field = forecast_field(model, day.values[:, : k + 1], k, steps, postprocess_from_config(config))
        source = "model"
    elif args.day and args.layout:
        layout = load_layout(args.layout, schema_from_config(config))
        day = _pick_day(load_speeds(args.day, layout, schema_from_config(config), grid).dayset, args.day_id)
        field = GriddedField.from_day(day, grid, layout)
        source = "observed"
    else:
        raise ParameterError("Give --field, or --model with --day, or --day with --layout")

    t0 = args.depart_minute if args.depart_minute is not None else field.t_first
    x0 = args.origin if args.origin is not None else field.layout.first
    x_dest = args.destination if args.destination is not None else field.layout.last
    minutes = travel_time(interpolate_field(field), t0, x0, x_dest, delta_x)
    return {
        "source": source,
        "depart_minute": t0,
        "origin": x0,
        "destination": x_dest,
        "delta_x": delta_x,
        "minutes": minutes,
    }


def _predictors(args: argparse.Namespace, config: Dict[str, Any], data, history: DaySet) -> list:
    grid = grid_from_config(config)
    chosen = [p.strip() for p in args.predictors.split(",") if p.strip()]
    predictors = []
    for name in chosen:
        if name == "dlm":
            if not args.model:
                raise ParameterError("The dlm predictor needs --model")
            predictors.append(DlmPredictor(_model_with_layout(args.model), postprocess_from_config(config)))
        elif name == "inst":
            predictors.append(InstantaneousPredictor(grid, data.layout))
        elif name == "knn":
            cfg = KnnConfig(k=int(config["evaluation"]["knn_k"]))
            predictors.append(KnnPredictor(history, grid, data.layout, cfg))
        else:
            raise ParameterError(f"Unknown predictor '{name}', expected dlm, inst or knn")
    for path in args.external or []:
        predictors.append(ExternalPredictions.from_csv(path, name=Path(path).stem))
    return predictors


def cmd_evaluate(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    data = _load_data_dir(args.data, config)
    grid = grid_from_config(config)
    section = config["evaluation"]
    test = _select_part(data.dayset, args.part, config)
    held_out = set(test.day_ids)
    history = DaySet(d for d in data.dayset if d.day_id not in held_out) if args.part != "all" else test
    horizons = args.horizons if args.horizons is not None else [float(h) for h in section["horizons"]]
    masks = masks_for(args.freeway or section["freeway"])
    trips = default_trips(grid, data.layout, horizons)
    delta_x = float(config["traveltime"]["delta_x"])

    report = None
    for predictor in _predictors(args, config, data, history):
        part = evaluate(
            predictor,
            test,
            data.layout,
            grid,
            trips,
            masks,
            delta_x=delta_x,
            initial_extent_steps=int(section["initial_extent_steps"]),
            workers=_threads(args, config),
            baseline=str(section["baseline"]),
        )
        report = part if report is None else report.merge(part)

    out = Path(args.out_dir)
    report.to_json(out / "report.json")
    report.to_csv(out / "trips.csv")
    summary = {"output": str(out), "test_days": len(test), **report.to_dict()}
    if report.unevaluable_total:
        raise UnevaluableTrips(summary)
    return summary


def cmd_grid_search(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    data = _load_data_dir(args.data, config)
    grid = grid_from_config(config)
    section = config["grid_search"]
    train, val, _ = split_dataset(data.dayset, tuple(config["ingest"]["split"]))
    horizons = args.horizons if args.horizons is not None else [0.0]
    result = grid_search(
        train,
        val,
        data.layout,
        grid,
        default_trips(grid, data.layout, horizons),
        masks_for(args.freeway or config["evaluation"]["freeway"]),
        rho_set=args.rho if args.rho is not None else [float(r) for r in section["rho"]],
        lambda_set=args.forgetting if args.forgetting is not None else [float(v) for v in section["lambda"]],
        mask=args.mask or section["mask"],
        params=postprocess_from_config(config),
        delta_x=float(config["traveltime"]["delta_x"]),
        initial_extent_steps=int(config["evaluation"]["initial_extent_steps"]),
        workers=_threads(args, config),
    )
    result.to_csv(args.out)
    return {"output": args.out, "train_days": len(train), "val_days": len(val), **result.to_dict()}


# =============================================================================
# PARSER
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML config (default: config/default.yml)")
    common.add_argument("--preset", type=str, help="Preset name under presets/ or a YAML path")
    common.add_argument("--json", action="store_true", help="Print the summary as JSON")
    common.add_argument("--threads", type=int, help="Worker threads for evaluation and grid search")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--no-activity-log", action="store_true", help="Do not record the run in logs/activity.db")

    parser = argparse.ArgumentParser(prog="dlm-traveltime", description="Freeway travel time prediction with DLMs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="Validate a raw CSV pair into a dataset directory; prints a JSON summary")
    p.add_argument("--speeds", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--out", required=True, help="Dataset directory to write")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--num-days", type=int)
    p.add_argument("--num-sensors", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="Fit transition matrices")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--regularization", type=float, required=True)
    p.add_argument("--forgetting-factor", type=float, required=True)
    p.add_argument("--part", choices=["all", "train", "train+val"], default="all")
    p.add_argument("--out", required=True, help="Model file")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("update", parents=[common], help="Fold new days into a model")
    p.add_argument("--model", required=True)
    p.add_argument("--day", required=True, help="Speed CSV holding the new day(s)")
    p.add_argument("--out", help="Model file to write (default: overwrite --model)")
    p.set_defaults(handler=cmd_update)

    p = sub.add_parser("predict", parents=[common], help="Predict a velocity field from index k")
    p.add_argument("--model", required=True)
    p.add_argument("--day", required=True, help="Speed CSV holding the observed day")
    p.add_argument("--day-id")
    p.add_argument("--current-index", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True, help="Field CSV")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("travel-time", parents=[common], help="Integrate a trip through a velocity field")
    p.add_argument("--field", help="Field CSV written by predict")
    p.add_argument("--model")
    p.add_argument("--day")
    p.add_argument("--day-id")
    p.add_argument("--layout", help="Layout CSV, for the observed travel time of --day")
    p.add_argument("--current-index", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--depart-minute", type=float)
    p.add_argument("--origin", type=float)
    p.add_argument("--destination", type=float)
    p.add_argument("--delta-x", type=float)
    p.set_defaults(handler=cmd_travel_time)

    p = sub.add_parser("evaluate", parents=[common], help="Travel time MAPE over test days")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--predictors", default="dlm,inst")
    p.add_argument("--external", action="append", help="CSV of externally predicted travel times")
    p.add_argument("--part", choices=["all", "train", "val", "test"], default="test")
    p.add_argument("--horizons", type=_float_list)
    p.add_argument("--freeway", choices=["i5s", "i210e"])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("grid-search", parents=[common], help="Validation MAPE per (rho, lambda)")
    p.add_argument("--data", required=True)
    p.add_argument("--rho", type=_float_list)
    p.add_argument("--forgetting", type=_float_list, help="Comma-separated lambda values")
    p.add_argument("--horizons", type=_float_list, help="Default: 0")
    p.add_argument("--mask", choices=["peak", "offpeak", "all"])
    p.add_argument("--freeway", choices=["i5s", "i210e"])
    p.add_argument("--out", required=True, help="Table CSV")
    p.set_defaults(handler=cmd_grid_search)
    return parser


def _print_summary(summary: Dict[str, Any], as_json: bool) -> None:
    if as_json:
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
        return
    for key, value in summary.items():
        if isinstance(value, (list, dict)) and len(str(value)) > 120:
            value = f"<{len(value)} entries>"
        print(f" {key}: {value}")


def _fail(error: BaseException, code: int) -> int:
    payload = error.to_dict() if isinstance(error, DlmError) else {"error": type(error).__name__, "message": str(error)}
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = load_config(args.config, args.preset)
    except ConfigError as e:
        return _fail(e, EXIT_INPUT)

    log_section = config["logging"]
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, str(log_section["level"]).upper(), logging.INFO),
        format=log_section["format"],
    )
    ledger = ActivityLog(
        Path(log_section["logs_directory"]) / "activity.db",
        enabled=bool(log_section["activity_db_enabled"]) and not args.no_activity_log,
    )
    handler: Callable = args.handler
    ledger.log_event(args.command, "STARTED", {"argv": list(argv) if argv is not None else sys.argv[1:]})
    try:
        summary = handler(args, config)
    except UnevaluableTrips as e:
        _print_summary(e.summary, args.json)
        ledger.log_event(args.command, "FAILED", {"unevaluable": e.summary.get("unevaluable")})
        return EXIT_UNEVALUABLE
    except HorizonExceededError as e:
        ledger.log_event(args.command, "FAILED", e.to_dict())
        return _fail(e, EXIT_UNEVALUABLE)
    except _NUMERICAL_ERRORS as e:
        ledger.log_event(args.command, "FAILED", e.to_dict())
        return _fail(e, EXIT_NUMERICAL)
    except _INPUT_ERRORS as e:
        ledger.log_event(args.command, "FAILED", {"error": type(e).__name__, "message": str(e)})
        return _fail(e, EXIT_INPUT)

    # ingest output is a data-quality report meant for other tools
    _print_summary(summary, args.json or args.command == "ingest")
    ledger.log_event(args.command, "COMPLETED", {k: v for k, v in summary.items() if not isinstance(v, (list, dict))})
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
