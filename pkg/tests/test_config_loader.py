import pytest

from config_loader import (
    DEFAULT_CONFIG,
    grid_from_config,
    load_config,
    postprocess_from_config,
    schema_from_config,
)
from errors import ConfigError


def test_defaults_give_the_full_day_grid():
    config = load_config()
    grid = grid_from_config(config)
    assert (grid.start_minute, grid.step_minutes, grid.num_steps) == (360.0, 5.0, 181)
    assert grid.end_minute == 1260.0


def test_default_postprocess_constants():
    params = postprocess_from_config(load_config())
    assert (params.a, params.b, params.tau_lower, params.tau_upper) == (0.05, 10.0, 10.0, 75.0)


def test_preset_overlays_only_its_keys():
    config = load_config(preset="synthetic")
    assert config["grid"]["num_steps"] == 37
    assert config["grid"]["step_minutes"] == 5
    assert config["synthetic"]["coupling"] == 0.01
    assert config["synthetic"]["sigma"] == DEFAULT_CONFIG["synthetic"]["sigma"]


def test_freeway_presets_select_their_masks():
    assert load_config(preset="i5s")["evaluation"]["freeway"] == "i5s"
    assert load_config(preset="i210e")["evaluation"]["freeway"] == "i210e"


def test_config_file_then_preset_file(tmp_path):
    base = tmp_path / "base.yml"
    base.write_text("grid:\n  num_steps: 13\nperformance:\n  threads: 3\n")
    overlay = tmp_path / "overlay.yaml"
    overlay.write_text("grid:\n  num_steps: 25\n")
    config = load_config(base, overlay)
    assert config["grid"]["num_steps"] == 25
    assert config["performance"]["threads"] == 3
    assert config["grid"]["start_minute"] == 360


def test_empty_file_keeps_defaults(tmp_path):
    empty = tmp_path / "empty.yml"
    empty.write_text("")
    assert load_config(empty)["grid"] == DEFAULT_CONFIG["grid"]


def test_loading_does_not_mutate_defaults(tmp_path):
    path = tmp_path / "c.yml"
    path.write_text("evaluation:\n  horizons: [5]\n")
    load_config(path)["evaluation"]["horizons"].append(99)
    assert DEFAULT_CONFIG["evaluation"]["horizons"] == [0, 15, 30, 60]


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yml")


def test_missing_preset():
    with pytest.raises(ConfigError):
        load_config(preset="no_such_preset")


def test_parse_errors_are_loud(tmp_path):
    broken = tmp_path / "broken.yml"
    broken.write_text("grid: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(broken)
    scalar = tmp_path / "scalar.yml"
    scalar.write_text("just a string\n")
    with pytest.raises(ConfigError):
        load_config(scalar)


def test_schema_follows_column_bindings(tmp_path):
    path = tmp_path / "c.yml"
    path.write_text("ingest:\n  columns:\n    speed_mph: avg_speed\n  max_missing_fraction: 0.5\n")
    schema = schema_from_config(load_config(path))
    assert schema.speed_column == "avg_speed"
    assert schema.day_column == "day"
    assert schema.max_missing_fraction == 0.5
