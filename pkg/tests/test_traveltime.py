import numpy as np
import pytest

from core import DayVelocityMatrix, SensorLayout, TimeGrid
from errors import DataError, DimensionError, ExtentError, HorizonExceededError, ParameterError
from traveltime import (
    GriddedField,
    experienced_travel_time,
    interpolate_field,
    read_field_csv,
    travel_time,
    write_field_csv,
)


def _constant_field(speed=60.0, length=30.0, times=(360.0, 420.0, 480.0)):
    layout = SensorLayout((0.0, length / 2, length))
    return GriddedField(times=np.array(times), layout=layout, values=np.full((3, len(times)), speed))


def test_field_validation():
    layout = SensorLayout((0.0, 1.0))
    with pytest.raises(DimensionError):
        GriddedField(times=np.array([360.0]), layout=layout, values=np.full((2, 1), 60.0))
    with pytest.raises(DimensionError):
        GriddedField(times=np.array([360.0, 360.0]), layout=layout, values=np.full((2, 2), 60.0))
    with pytest.raises(DataError):
        GriddedField(times=np.array([360.0, 365.0]), layout=layout, values=np.zeros((2, 2)))


def test_constant_field_interpolates_to_constant():
    fn = interpolate_field(_constant_field())
    assert fn(400.0, 7.3) == pytest.approx(60.0)
    assert fn(360.0, 0.0) == 60.0


def test_bilinear_midpoint_in_time():
    layout = SensorLayout((0.0, 1.0))
    field = GriddedField(times=np.array([360.0, 365.0]), layout=layout, values=[[40.0, 60.0], [40.0, 60.0]])
    fn = interpolate_field(field)
    assert fn(362.5, 0.0) == pytest.approx(50.0)
    assert fn(362.5, 0.5) == pytest.approx(50.0)


def test_exact_at_grid_nodes():
    rng = np.random.default_rng(1)
    layout = SensorLayout((0.0, 0.7, 2.0, 3.5))
    values = rng.uniform(10.0, 70.0, size=(4, 5))
    field = GriddedField(times=360.0 + 5.0 * np.arange(5), layout=layout, values=values)
    fn = interpolate_field(field)
    for j, t in enumerate(field.times):
        for m, x in enumerate(layout.positions):
            assert fn(t, x) == pytest.approx(values[m, j], rel=1e-14)


def test_query_outside_extent():
    fn = interpolate_field(_constant_field())
    with pytest.raises(ExtentError):
        fn(359.0, 1.0)
    with pytest.raises(ExtentError):
        fn(400.0, 31.0)
    assert fn(400.0, 30.0 + 1e-12) == pytest.approx(60.0)


def test_constant_speed_trip():
    minutes = travel_time(interpolate_field(_constant_field()), 360.0, 0.0, 30.0, 0.01)
    assert minutes == pytest.approx(30.0, abs=1e-9)
    coarse = travel_time(interpolate_field(_constant_field()), 360.0, 0.0, 30.0, 0.5)
    assert coarse == pytest.approx(30.0, abs=1e-9)


def test_two_speed_corridor():
    layout = SensorLayout((0.0, 9.99, 10.0, 20.0))
    values = np.tile([[60.0], [60.0], [30.0], [30.0]], (1, 2))
    field = GriddedField(times=np.array([360.0, 480.0]), layout=layout, values=values)
    minutes = travel_time(interpolate_field(field), 360.0, 0.0, 20.0, 0.01)
    assert minutes == pytest.approx(30.0, abs=0.1)


def test_halving_step_converges_monotonically():
    layout = SensorLayout((0.0, 20.0))
    field = GriddedField(times=np.array([360.0, 480.0]), layout=layout, values=[[60.0, 60.0], [30.0, 30.0]])
    fn = interpolate_field(field)
    exact = 60.0 * np.log(2.0) / 1.5
    minutes = [travel_time(fn, 360.0, 0.0, 20.0, 0.1 / 2 ** i) for i in range(5)]
    diffs = np.abs(np.diff(minutes))
    assert np.all(diffs[1:] < diffs[:-1])
    errors = np.abs(np.array(minutes) - exact)
    assert np.all(errors[1:] < errors[:-1])


def test_final_partial_step_lands_on_destination():
    fn = interpolate_field(_constant_field())
    assert travel_time(fn, 360.0, 0.0, 10.05, 0.1) == pytest.approx(10.05, abs=1e-9)


def test_departure_at_last_time_exceeds_horizon():
    fn = interpolate_field(_constant_field())
    with pytest.raises(HorizonExceededError):
        travel_time(fn, 480.0, 0.0, 0.5, 0.01)


def test_horizon_exceeded_reports_distance_covered():
    fn = interpolate_field(_constant_field(times=(360.0, 370.0, 380.0)))
    with pytest.raises(HorizonExceededError) as excinfo:
        travel_time(fn, 360.0, 0.0, 30.0, 0.01)
    assert excinfo.value.distance_covered == pytest.approx(20.0, abs=0.02)


def test_trip_preconditions():
    fn = interpolate_field(_constant_field())
    with pytest.raises(ParameterError):
        travel_time(fn, 360.0, 5.0, 5.0)
    with pytest.raises(ParameterError):
        travel_time(fn, 360.0, 0.0, 31.0)
    with pytest.raises(ParameterError):
        travel_time(fn, 360.0, 0.0, 10.0, 0.0)
    with pytest.raises(ExtentError):
        travel_time(fn, 300.0, 0.0, 10.0)


@pytest.fixture
def constant_day():
    grid = TimeGrid()
    layout = SensorLayout(tuple(np.linspace(0.0, 58.33, 5)))
    return DayVelocityMatrix("2012-01-03", np.full((5, grid.num_steps), 60.0)), layout, grid


def test_experienced_time_on_constant_day(constant_day):
    day, layout, grid = constant_day
    minutes = experienced_travel_time(day, layout, grid, 420.0, layout.first, layout.last)
    assert minutes == pytest.approx(58.33, abs=1e-8)


def test_experienced_time_needs_positive_length(constant_day):
    day, layout, grid = constant_day
    with pytest.raises(ParameterError):
        experienced_travel_time(day, layout, grid, 420.0, 10.0, 10.0)


def test_experienced_time_matches_manual_field(constant_day):
    day, layout, grid = constant_day
    varied = DayVelocityMatrix(day.day_id, day.values * np.linspace(0.6, 1.1, grid.num_steps))
    manual = travel_time(interpolate_field(GriddedField(grid.times, layout, varied.values)), 500.0, 3.0, 50.0, 0.01)
    assert experienced_travel_time(varied, layout, grid, 500.0, 3.0, 50.0, 0.01) == manual


def test_field_csv_round_trip(tmp_path):
    grid = TimeGrid()
    layout = SensorLayout((0.0, 1.25, 3.0), ("a", "b", "c"))
    field = GriddedField(times=grid.times[10:14], layout=layout, values=np.arange(1.0, 13.0).reshape(3, 4) + 0.1)
    write_field_csv(field, grid, tmp_path / "field.csv")
    back = read_field_csv(tmp_path / "field.csv", grid)
    assert back.layout == layout
    np.testing.assert_array_equal(back.times, field.times)
    np.testing.assert_array_equal(back.values, field.values)
