import numpy as np
import pytest

from core import SensorLayout, TimeGrid
from dlm import DlmModel, Hyperparams, propagate
from errors import DataError, DimensionError, IndexRangeError, ParameterError
from predict import PostProcessParams, forecast_field, post_process, predict_linear, predict_steps


def _model(H, layout=None):
    H = np.asarray(H, dtype=float)
    return DlmModel(
        hyper=Hyperparams(1.0, 1.0),
        days_seen=1,
        G=H.copy(),
        P=np.tile(np.eye(H.shape[1]), (H.shape[0], 1, 1)),
        H=H,
        grid=TimeGrid(num_steps=H.shape[0] + 1),
        layout=layout,
    )


def test_post_process_identity_band():
    assert post_process(50.0) == 50.0
    assert post_process(10.0) == 10.0
    assert post_process(75.0) == 75.0


def test_post_process_saturation_values():
    assert post_process(-10.0) == pytest.approx(5.0, abs=1e-12)
    assert post_process(275.0) == pytest.approx(84.0909090909, abs=1e-9)


def test_post_process_bounds_and_monotonicity():
    x = np.linspace(-1e6, 1e6, 100000)
    y = post_process(x)
    assert np.all(y > 0) and np.all(y < 85)
    assert np.all(np.diff(y) > 0)


@pytest.mark.parametrize("eps", [1e-6, 1e-9])
@pytest.mark.parametrize("tau", [10.0, 75.0])
def test_post_process_is_continuous_at_thresholds(tau, eps):
    params = PostProcessParams()
    bound = eps * (1.0 + params.a * params.b)
    for x in (tau - eps, tau, tau + eps):
        assert abs(post_process(x, params) - tau) <= bound


def test_post_process_approaches_ceiling():
    assert 85.0 - post_process(1e9) < 1e-6


def test_post_process_rejects_non_finite():
    with pytest.raises(DataError):
        post_process(np.array([50.0, np.inf]))


def test_post_process_params_validation():
    with pytest.raises(ParameterError):
        PostProcessParams(a=0.0)
    with pytest.raises(ParameterError):
        PostProcessParams(tau_lower=80.0, tau_upper=75.0)
    with pytest.raises(ParameterError):
        PostProcessParams(b=20.0, tau_lower=10.0)
    params = PostProcessParams()
    assert (params.floor, params.ceiling) == (0.0, 85.0)


def test_identity_model_keeps_speeds():
    model = _model(np.tile(np.eye(2), (4, 1, 1)))
    field = predict_steps(model, np.array([60.0, 40.0]), 0, 3)
    np.testing.assert_array_equal(field.values, np.tile([[60.0], [40.0]], (1, 3)))
    assert not field.saturated.any()
    np.testing.assert_array_equal(field.indices, [1, 2, 3])


def test_scalar_prediction_saturates_second_step():
    model = _model(np.full((2, 1, 1), 1.5))
    field = predict_steps(model, np.array([40.0]), 0, 2)
    assert field.values[0, 0] == pytest.approx(60.0)
    assert field.values[0, 1] == pytest.approx(75.0 + 10.0 * 0.75 / 1.75)
    np.testing.assert_array_equal(field.saturated[0], [False, True])


def test_prediction_past_grid_end():
    model = _model(np.tile(np.eye(2), (4, 1, 1)))
    with pytest.raises(IndexRangeError):
        predict_steps(model, np.array([60.0, 40.0]), 2, 3)


def test_prediction_checks_vector():
    model = _model(np.tile(np.eye(2), (4, 1, 1)))
    with pytest.raises(DimensionError):
        predict_steps(model, np.array([60.0, 40.0, 30.0]), 0, 1)
    with pytest.raises(DataError):
        predict_steps(model, np.array([60.0, -1.0]), 0, 1)


def test_linear_prediction_examples():
    assert predict_linear(_model(np.tile(np.eye(2), (3, 1, 1))), [55.0, 45.0], 0, 3).tolist() == [55.0, 45.0]
    scalar = _model([[[1.2]], [[1.5]]])
    assert predict_linear(scalar, [2.0], 0, 2)[0] == pytest.approx(3.6)


def test_linear_prediction_equals_propagation():
    rng = np.random.default_rng(12)
    for _ in range(20):
        m = int(rng.integers(2, 7))
        model = _model(np.eye(m) + 0.1 * rng.standard_normal((12, m, m)))
        v = rng.uniform(20.0, 70.0, size=m)
        steps = int(rng.integers(1, 11))
        expected = propagate(model, 1, steps) @ v
        np.testing.assert_allclose(predict_linear(model, v, 1, steps), expected, rtol=1e-10)


def test_post_processed_equals_linear_inside_band():
    rng = np.random.default_rng(13)
    model = _model(np.eye(3) + 0.001 * rng.standard_normal((6, 3, 3)))
    v = np.array([50.0, 40.0, 60.0])
    field = predict_steps(model, v, 0, 6)
    np.testing.assert_allclose(field.values[:, -1], predict_linear(model, v, 0, 6), rtol=1e-12)


def test_forecast_field_starts_with_observation():
    layout = SensorLayout((0.0, 2.0))
    model = _model(np.tile(np.eye(2), (4, 1, 1)), layout=layout)
    observed = np.array([[61.0, 62.0], [41.0, 42.0]])
    field = forecast_field(model, observed, 1, 2)
    np.testing.assert_array_equal(field.times, [365.0, 370.0, 375.0])
    np.testing.assert_array_equal(field.values, np.tile([[62.0], [42.0]], (1, 3)))


def test_forecast_field_needs_layout():
    model = _model(np.tile(np.eye(2), (4, 1, 1)))
    with pytest.raises(ParameterError):
        forecast_field(model, np.full((2, 1), 50.0), 0, 1)
