#!/usr/bin/env python3
"""
config_loader.py - YAML Configuration Layer

WHY THIS SCRIPT EXISTS:
- Every run is reproducible from config + input files, so settings live in YAML
- Built-in defaults mean a missing config file still gives the standard 6 AM - 9 PM, 5-minute setup
- Presets overlay freeway-specific choices (period masks, corridor) on the defaults

KEY ARCHITECTURAL DECISIONS:
- DEEP MERGE: defaults <- config file <- preset, section by section
- FAIL LOUDLY ON PARSE ERRORS: a numerical run must not fall back silently
- TYPED ACCESSORS: sections become TimeGrid / PostProcessParams / DatasetSchema here
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from errors import ConfigError

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config" / "default.yml"
PRESETS_DIR = PROJECT_ROOT / "presets"

DEFAULT_CONFIG: Dict[str, Any] = {
    "grid": {"start_minute": 360, "step_minutes": 5, "num_steps": 181},
    "ingest": {
        "max_missing_fraction": 0.2,
        "split": [0.7, 0.15, 0.15],
        "columns": {
            "day": "day",
            "sensor_id": "sensor_id",
            "time_index": "time_index",
            "speed_mph": "speed_mph",
        },
        "layout_columns": {"sensor_id": "sensor_id", "milepost": "milepost_miles"},
    },
    "synthetic": {
        "num_sensors": 5,
        "num_days": 60,
        "sensor_spacing_miles": 4.0,
        "sigma": 1.0,
        "seed": 0,
        "v0_range": [20.0, 70.0],
        "coupling": 0.02,
        "dip_depth": 0.25,
        "spectral_bound": 1.1,
        "sanity_bound": 200.0,
        "start_date": "2012-01-02",
    },
    "postprocess": {"a": 0.05, "b": 10.0, "tau_lower": 10.0, "tau_upper": 75.0},
    "traveltime": {"delta_x": 0.01},
    "evaluation": {
        "horizons": [0, 15, 30, 60],
        "initial_extent_steps": 12,
        "knn_k": 1,
        "freeway": "i5s",
        "baseline": "inst",
    },
    "grid_search": {
        "rho": [0, 0.1, 0.3, 1, 3, 10, 30, 100, 300, 1000, 3000, 10000],
        "lambda": [1, 0.999, 0.995, 0.99, 0.95],
        "mask": "peak",
    },
    "performance": {"threads": 1},
    "logging": {
        "level": "INFO",
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "activity_db_enabled": True,
        "logs_directory": "logs",
    },
}


def _deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Failed to parse {path}: {e}", path=str(path)) from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level", path=str(path))
    return data


def _resolve_preset(preset: Union[str, Path]) -> Path:
    candidate = Path(preset)
    if candidate.suffix in (".yml", ".yaml"):
        return candidate
    return PRESETS_DIR / f"{preset}.yml"


def load_config(
    path: Optional[Union[str, Path]] = None,
    preset: Optional[Union[str, Path]] = None,
) -> Dict[str, Any]:
    """
    Load configuration with defaults, then the config file, then a preset.

    Args:
        path: YAML file; defaults to config/default.yml. A missing file is not an error.
        preset: preset name under presets/ or a path to a YAML file

    Returns:
        Merged configuration dictionary
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if config_path.exists():
        config = _deep_merge(config, _read_yaml(config_path))
        logger.debug(f"Loaded config from {config_path}")
    elif path is not None:
        raise ConfigError(f"Config file not found: {config_path}", path=str(config_path))

    if preset is not None:
        preset_path = _resolve_preset(preset)
        if not preset_path.exists():
            raise ConfigError(f"Preset not found: {preset_path}", path=str(preset_path))
        config = _deep_merge(config, _read_yaml(preset_path))
        logger.debug(f"Applied preset {preset_path}")
    return config


def grid_from_config(config: Dict[str, Any]):
    from core import TimeGrid

    section = config["grid"]
    return TimeGrid(
        start_minute=float(section["start_minute"]),
        step_minutes=float(section["step_minutes"]),
        num_steps=int(section["num_steps"]),
    )


def postprocess_from_config(config: Dict[str, Any]):
    from predict import PostProcessParams

    section = config["postprocess"]
    return PostProcessParams(
        a=float(section["a"]),
        b=float(section["b"]),
        tau_lower=float(section["tau_lower"]),
        tau_upper=float(section["tau_upper"]),
    )


def schema_from_config(config: Dict[str, Any]):
    from ingest import DatasetSchema

    section = config["ingest"]
    columns = section["columns"]
    layout_columns = section["layout_columns"]
    return DatasetSchema(
        day_column=columns["day"],
        sensor_column=columns["sensor_id"],
        time_index_column=columns["time_index"],
        speed_column=columns["speed_mph"],
        layout_sensor_column=layout_columns["sensor_id"],
        layout_milepost_column=layout_columns["milepost"],
        max_missing_fraction=float(section["max_missing_fraction"]),
    )
