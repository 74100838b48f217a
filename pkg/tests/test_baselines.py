import numpy as np
import pytest

from baselines import InstantaneousPredictor, KnnConfig, KnnPredictor, instantaneous_field, knn_predict
from conftest import iso_day
from core import DaySet, DayVelocityMatrix, SensorLayout, TimeGrid
from errors import DimensionError, ParameterError
from traveltime import experienced_travel_time, interpolate_field, travel_time

GRID = TimeGrid(num_steps=6)
LAYOUT = SensorLayout((0.0, 3.0))


def _day(offset, values):
    return DayVelocityMatrix(iso_day(offset), np.asarray(values, dtype=float))


def test_instantaneous_field_repeats_current_speeds():
    field = instantaneous_field(np.array([60.0, 40.0]), GRID, 5, LAYOUT)
    assert field.values.shape == (2, 5)
    np.testing.assert_array_equal(field.values, np.tile([[60.0], [40.0]], (1, 5)))


def test_instantaneous_field_errors():
    with pytest.raises(ParameterError):
        instantaneous_field(np.array([60.0, 40.0]), GRID, 0, LAYOUT)
    with pytest.raises(DimensionError):
        instantaneous_field(np.array([60.0, 40.0, 50.0]), GRID, 3, LAYOUT)


def test_instantaneous_travel_time_is_distance_over_speed():
    field = instantaneous_field(np.array([45.0, 45.0]), TimeGrid(), 20, LAYOUT)
    assert travel_time(interpolate_field(field), 360.0, 0.0, 3.0) == pytest.approx(4.0, abs=1e-9)


def test_instantaneous_matches_experienced_on_time_constant_day():
    grid = TimeGrid(num_steps=30)
    layout = SensorLayout((0.0, 2.0, 5.0))
    day = _day(0, np.tile([[62.0], [48.0], [55.0]], (1, 30)))
    predictor = InstantaneousPredictor(grid, layout)
    field = predictor.forecast(day.values[:, :5], 4, 10)
    predicted = travel_time(interpolate_field(field), grid.time_of(4), 0.0, 5.0)
    actual = experienced_travel_time(day, layout, grid, grid.time_of(4), 0.0, 5.0)
    assert predicted == pytest.approx(actual, rel=1e-12)


def test_knn_exact_copy_is_its_own_neighbour():
    rng = np.random.default_rng(0)
    train = DaySet(_day(d, rng.uniform(30.0, 70.0, size=(2, 6))) for d in range(4))
    target = train[2]
    remaining = knn_predict(train, target.values[:, :3], KnnConfig(k=1))
    np.testing.assert_array_equal(remaining, target.values[:, 3:])


def test_knn_two_neighbours_average():
    train = DaySet([_day(0, np.full((2, 6), 40.0)), _day(1, np.full((2, 6), 60.0))])
    remaining = knn_predict(train, np.full((2, 2), 55.0), KnnConfig(k=2))
    np.testing.assert_array_equal(remaining, np.full((2, 4), 50.0))


def test_knn_ties_go_to_the_earlier_day():
    train = DaySet([_day(0, np.full((2, 6), 48.0)), _day(1, np.full((2, 6), 52.0))])
    remaining = knn_predict(train, np.full((2, 3), 50.0), KnnConfig(k=1))
    np.testing.assert_array_equal(remaining, np.full((2, 3), 48.0))


def test_knn_with_all_days_ignores_order():
    rng = np.random.default_rng(1)
    days = [DayVelocityMatrix(f"d{j}", rng.uniform(30.0, 70.0, size=(2, 6))) for j in range(5)]
    partial = rng.uniform(30.0, 70.0, size=(2, 2))
    forward = knn_predict(DaySet(days), partial, KnnConfig(k=5))
    backward = knn_predict(DaySet(days[::-1]), partial, KnnConfig(k=5))
    np.testing.assert_allclose(forward, backward, rtol=1e-12)


def test_knn_window_limits_the_distance():
    train = DaySet(
        [
            _day(0, [[70.0, 50.0, 41.0, 41.0, 41.0, 41.0]] * 2),
            _day(1, [[50.0, 60.0, 42.0, 42.0, 42.0, 42.0]] * 2),
        ]
    )
    partial = np.array([[50.0, 50.0]] * 2)
    np.testing.assert_array_equal(knn_predict(train, partial, KnnConfig(k=1))[:, 0], [42.0, 42.0])
    np.testing.assert_array_equal(knn_predict(train, partial, KnnConfig(k=1, window=1))[:, 0], [41.0, 41.0])


def test_knn_errors():
    with pytest.raises(ParameterError):
        knn_predict(DaySet(), np.full((2, 2), 50.0))
    train = DaySet([_day(0, np.full((2, 6), 40.0))])
    with pytest.raises(ParameterError):
        knn_predict(train, np.full((2, 2), 50.0), KnnConfig(k=2))
    with pytest.raises(DimensionError):
        knn_predict(train, np.full((3, 2), 50.0))
    with pytest.raises(ParameterError):
        KnnConfig(k=0)


def test_knn_predictor_field_starts_with_observation():
    train = DaySet([_day(0, np.full((2, 6), 40.0)), _day(1, np.full((2, 6), 60.0))])
    predictor = KnnPredictor(train, GRID, LAYOUT, KnnConfig(k=1))
    observed = np.full((2, 3), 58.0)
    field = predictor.forecast(observed, 2, 2)
    np.testing.assert_array_equal(field.times, [370.0, 375.0, 380.0])
    np.testing.assert_array_equal(field.values, [[58.0, 60.0, 60.0], [58.0, 60.0, 60.0]])


def test_knn_predictor_for_day_drops_that_day_from_the_pool():
    today = _day(0, np.full((2, 6), 58.0))
    other = _day(1, np.full((2, 6), 40.0))
    predictor = KnnPredictor(DaySet([today, other]), GRID, LAYOUT, KnnConfig(k=1))
    narrowed = predictor.for_day(today.day_id)
    assert narrowed.train.day_ids == [other.day_id]
    field = narrowed.forecast(today.values[:, :3], 2, 2)
    np.testing.assert_array_equal(field.values[:, 1:], np.full((2, 2), 40.0))
    assert predictor.for_day(iso_day(5)) is predictor
