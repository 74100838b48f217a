#!/usr/bin/env python3
"""
predict.py - Multi-Step Velocity Prediction

WHY THIS SCRIPT EXISTS:
- Propagates a measured velocity vector through the trained transition matrices
- Applies the saturating post-processing function after every step so predictions stay physical
- Provides the plain linear predictor for checking the product-of-transitions identity

KEY ARCHITECTURAL DECISIONS:
- ELEMENTWISE POST-PROCESSING: identity on [tau_l, tau_u], smooth saturation outside
- SATURATION IS FLAGGED, NOT AN ERROR: the correction is the point of the function
- PURE FUNCTIONS: models are immutable, so predictions parallelize freely
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from dlm import DlmModel, propagate
from errors import DataError, DimensionError, IndexRangeError, ParameterError
from traveltime import GriddedField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PostProcessParams:
    """
    Smoothing (a, b) and thresholds (tau_lower, tau_upper) of the post-processing function.

    Outputs lie strictly inside (tau_lower - b, tau_upper + b). tau_lower >= b is
    required so that the floor stays non-negative and predicted speeds stay positive.
    """

    a: float = 0.05
    b: float = 10.0
    tau_lower: float = 10.0
    tau_upper: float = 75.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ParameterError(f"Smoothing parameters must be positive, got a={self.a}, b={self.b}")
        if not 0 <= self.tau_lower < self.tau_upper:
            raise ParameterError(
                f"Thresholds must satisfy 0 <= tau_lower < tau_upper, got {self.tau_lower}, {self.tau_upper}"
            )
        if self.tau_lower - self.b < 0:
            raise ParameterError(
                f"tau_lower - b = {self.tau_lower - self.b} would allow negative speeds"
            )

    @property
    def floor(self) -> float:
        return self.tau_lower - self.b

    @property
    def ceiling(self) -> float:
        return self.tau_upper + self.b


def post_process(x: Union[float, np.ndarray], params: PostProcessParams = PostProcessParams()):
    """
    f(x) = b * s / (1 + |s|) + tau   with s = a (x - tau) outside [tau_l, tau_u], x inside.

    Accepts scalars or arrays; arrays are processed elementwise.

    Raises:
        DataError: x is not finite
    """
    values = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("post_process needs finite input")
    low = params.a * (values - params.tau_lower)
    high = params.a * (values - params.tau_upper)
    result = np.where(
        values < params.tau_lower,
        params.b * low / (1.0 + np.abs(low)) + params.tau_lower,
        np.where(
            values > params.tau_upper,
            params.b * high / (1.0 + np.abs(high)) + params.tau_upper,
            values,
        ),
    )
    if np.ndim(x) == 0:
        return float(result)
    return result


@dataclass(frozen=True, eq=False)
class PredictedField:
    """
    Post-processed predictions v_{k+1|k} .. v_{k+i|k}.

    Args:
        origin: index k of the measurement the prediction starts from
        values: M x i predicted speeds
        predicted: per-column flag, True for predicted columns
        saturated: M x i flags, True where post-processing changed the linear value
    """

    origin: int
    values: np.ndarray
    predicted: np.ndarray
    saturated: np.ndarray

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    @property
    def indices(self) -> np.ndarray:
        return self.origin + 1 + np.arange(self.steps)


def _check_request(model: DlmModel, v_k: np.ndarray, k: int, steps: int) -> np.ndarray:
    vector = np.asarray(v_k, dtype=float).reshape(-1)
    if vector.size != model.num_sensors:
        raise DimensionError(f"Velocity vector has {vector.size} entries, model has {model.num_sensors} sensors")
    if not np.all(np.isfinite(vector)) or np.any(vector <= 0):
        raise DataError("Measured velocities must be finite and positive")
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if k < 0 or k + steps > model.num_intervals:
        raise IndexRangeError(
            f"Prediction k={k}, i={steps} runs past the grid end K={model.num_intervals}", k=k, steps=steps
        )
    return vector


def predict_steps(
    model: DlmModel,
    v_k: np.ndarray,
    k: int,
    steps: int,
    params: PostProcessParams = PostProcessParams(),
) -> PredictedField:
    """
    Recursive prediction v_{k+j|k} = f(H_{k+j-1} v_{k+j-1|k}), j = 1..steps.

    Raises:
        IndexRangeError: k + steps > K
        DimensionError: v_k does not match the model
    """
    current = _check_request(model, v_k, k, steps)
    values = np.empty((model.num_sensors, steps))
    saturated = np.zeros((model.num_sensors, steps), dtype=bool)
    for j in range(steps):
        linear = model.H[k + j] @ current
        current = post_process(linear, params)
        values[:, j] = current
        saturated[:, j] = (linear < params.tau_lower) | (linear > params.tau_upper)
    if saturated.any():
        logger.debug(f"Post-processing saturated {int(saturated.sum())} predicted cells from k={k}")
    return PredictedField(origin=k, values=values, predicted=np.ones(steps, dtype=bool), saturated=saturated)


def predict_linear(model: DlmModel, v_k: np.ndarray, k: int, steps: int) -> np.ndarray:
    """Linear prediction H_{k+i-1} ... H_k v_k without post-processing."""
    vector = _check_request(model, v_k, k, steps)
    return propagate(model, k, steps) @ vector


def forecast_field(
    model: DlmModel,
    observed: np.ndarray,
    k: int,
    steps: int,
    params: PostProcessParams = PostProcessParams(),
) -> GriddedField:
    """
    Gridded field from t_k to t_{k+steps}: the observation at k, then predictions.

    Args:
        observed: M x (k+1) speeds through the current index; only the last column is used
    """
    if model.layout is None:
        raise ParameterError("Model carries no sensor layout; cannot build a velocity field")
    observed = np.asarray(observed, dtype=float)
    if observed.ndim != 2 or observed.shape[1] != k + 1:
        raise DimensionError(f"Expected observations through index {k}, got shape {observed.shape}")
    prediction = predict_steps(model, observed[:, k], k, steps, params)
    times = model.grid.start_minute + model.grid.step_minutes * np.arange(k, k + steps + 1)
    return GriddedField(
        times=times,
        layout=model.layout,
        values=np.column_stack([observed[:, k], prediction.values]),
    )


# TEST SUITE - quick smoke check of the post-processing constants
if __name__ == "__main__":
    print("Test 1: identity band")
    assert post_process(50.0) == 50.0
    print(" PASS: f(50) = 50\n")

    print("Test 2: saturation branches")
    assert abs(post_process(-10.0) - 5.0) < 1e-12
    assert abs(post_process(275.0) - (75.0 + 100.0 / 11.0)) < 1e-9
    print(" PASS: f(-10) = 5, f(275) = 84.0909...\n")

    print("Test 3: bounds")
    sample = post_process(np.linspace(-1e6, 1e6, 10001))
    assert np.all(sample > 0) and np.all(sample < 85)
    print(" PASS: 0 < f(x) < 85\n")
