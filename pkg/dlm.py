#!/usr/bin/env python3
"""
dlm.py - Transition Matrix Training, Recursive Updates and Model Files

WHY THIS SCRIPT EXISTS:
- Trains one M x M transition matrix per time index by regularized, forgetting-weighted least squares
- Folds new days into a trained model without refitting (matrix inversion lemma)
- Saves and loads models in a versioned, checksummed binary container

KEY ARCHITECTURAL DECISIONS:
- CHOLESKY SOLVES: the normal equations are symmetric positive definite, so they are
  factorized once per k and solved, not inverted explicitly for H
- P IS MATERIALIZED: the recursive update needs P_k = (V Lambda V^T + rho lambda^N I)^-1
- BATCHED RANK-ONE UPDATES: all K time indices update in one vectorized numpy pass
- SHA-256 WHOLE-FILE DIGEST: corruption is caught before any matrix is trusted
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from core import DayVelocityMatrix, DaySet, SensorLayout, TimeGrid, forgetting_weights, time_velocity_matrix
from errors import (
    ChecksumError,
    DataError,
    DimensionError,
    IndexRangeError,
    ModelFormatError,
    ParameterError,
    RankDeficiencyError,
    VersionError,
)

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"DLMTTMDL"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0
_HEADER = struct.Struct("<8sHHI")
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass(frozen=True)
class Hyperparams:
    """Regularization rho >= 0 and forgetting factor lambda in (0, 1]."""

    regularization: float
    forgetting_factor: float

    def __post_init__(self):
        if not np.isfinite(self.regularization) or self.regularization < 0:
            raise ParameterError(
                f"Regularization must be a finite value >= 0, got {self.regularization}",
                regularization=self.regularization,
            )
        if not 0 < self.forgetting_factor <= 1:
            raise ParameterError(
                f"Forgetting factor must lie in (0, 1], got {self.forgetting_factor}",
                forgetting_factor=self.forgetting_factor,
            )

    def to_dict(self) -> Dict[str, float]:
        return {"regularization": self.regularization, "forgetting_factor": self.forgetting_factor}


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DlmModel:
    """
    Trained state for every time index k = 0..K-1.

    G_k and P_k are the two factors of the recursive form, H_k = G_k P_k is cached.
    Instances are immutable; updates return a new model.
    """

    hyper: Hyperparams
    days_seen: int
    G: np.ndarray
    P: np.ndarray
    H: np.ndarray
    grid: TimeGrid
    layout: Optional[SensorLayout] = None

    def __post_init__(self):
        shapes = {self.G.shape, self.P.shape, self.H.shape}
        if len(shapes) != 1 or self.G.ndim != 3 or self.G.shape[1] != self.G.shape[2]:
            raise DimensionError(f"G, P, H must share one K x M x M shape, got {sorted(shapes)}")
        if self.G.shape[0] != self.grid.num_intervals:
            raise DimensionError(
                f"Model has {self.G.shape[0]} transitions but grid has {self.grid.num_intervals} intervals"
            )
        if self.layout is not None and self.layout.num_sensors != self.G.shape[1]:
            raise DimensionError(
                f"Model has {self.G.shape[1]} sensors but layout has {self.layout.num_sensors}"
            )
        for name in ("G", "P", "H"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def num_sensors(self) -> int:
        return self.G.shape[1]

    @property
    def num_intervals(self) -> int:
        return self.G.shape[0]

    def equals(self, other: "DlmModel") -> bool:
        """Bitwise equality of matrices and metadata."""
        return (
            self.hyper == other.hyper
            and self.days_seen == other.days_seen
            and self.grid == other.grid
            and self.layout == other.layout
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("G", "P", "H"))
        )


def _default_grid(num_points: int) -> TimeGrid:
    return TimeGrid(num_steps=num_points)


def init_model(grid: TimeGrid, layout: SensorLayout, hyper: Hyperparams) -> DlmModel:
    """
    Empty model: G_k = 0, P_k = I / rho, H_k = 0 for every k.

    Raises:
        ParameterError: rho == 0, since P would not exist
    """
    if hyper.regularization == 0:
        raise ParameterError(
            "Starting from an empty model requires regularization > 0; with rho = 0 "
            "P = (rho I)^-1 does not exist. Fit a batch first or pick rho > 0.",
            regularization=0.0,
        )
    num_sensors, num_intervals = layout.num_sensors, grid.num_intervals
    zeros = np.zeros((num_intervals, num_sensors, num_sensors))
    P = np.broadcast_to(np.eye(num_sensors) / hyper.regularization, zeros.shape).copy()
    return DlmModel(hyper=hyper, days_seen=0, G=zeros, P=P, H=zeros.copy(), grid=grid, layout=layout)


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise DataError(f"{what} contains non-finite speeds")


def fit_batch(
    dayset: DaySet,
    hyper: Hyperparams,
    grid: Optional[TimeGrid] = None,
    layout: Optional[SensorLayout] = None,
) -> DlmModel:
    """
    Solve the regularized, forgetting-weighted least squares for every k.

    H_k = V_{k+1} Lambda V_k^T (V_k Lambda V_k^T + rho lambda^N I)^-1, with
    Lambda = diag(lambda^(N-1), ..., 1) and N = |dayset|.

    Args:
        dayset: training days, oldest first
        hyper: rho and lambda
        grid: time grid; defaults to the 6 AM grid with as many points as the data
        layout: sensor layout stored as model metadata

    Raises:
        RankDeficiencyError: rho == 0 and V_k Lambda V_k^T is singular for some k
        DataError: the data contain non-finite speeds
    """
    if len(dayset) == 0:
        raise ParameterError("Cannot fit a model on an empty day set")
    cube = dayset.stack()
    _check_finite(cube, "Training data")
    num_days, num_sensors, num_points = cube.shape
    grid = grid or _default_grid(num_points)
    if layout is not None:
        dayset.check_shape(grid, layout)
    elif grid.num_steps != num_points:
        raise DimensionError(f"Data have {num_points} grid points, grid has {grid.num_steps}")

    lam, rho = hyper.forgetting_factor, hyper.regularization
    weights = forgetting_weights(num_days, lam)
    ridge = rho * lam ** num_days * np.eye(num_sensors)
    num_intervals = num_points - 1

    G = np.empty((num_intervals, num_sensors, num_sensors))
    P = np.empty_like(G)
    H = np.empty_like(G)
    identity = np.eye(num_sensors)
    for k in range(num_intervals):
        current = time_velocity_matrix(dayset, k)
        following = time_velocity_matrix(dayset, k + 1)
        if rho == 0 and np.linalg.matrix_rank(current) < num_sensors:
            raise RankDeficiencyError(
                f"V_{k} Lambda V_{k}^T is singular (rank {np.linalg.matrix_rank(current)} < {num_sensors}); "
                "use regularization > 0",
                k=k,
            )
        weighted = current * weights
        normal = weighted @ current.T + ridge
        G[k] = following @ weighted.T
        try:
            factor = cho_factor(normal, lower=True, check_finite=False)
        except LinAlgError:
            raise RankDeficiencyError(f"Normal equations at k={k} are not positive definite", k=k) from None
        P[k] = cho_solve(factor, identity, check_finite=False)
        # normal is symmetric: solve normal X = G^T, then H = X^T = G normal^-1
        H[k] = cho_solve(factor, G[k].T, check_finite=False).T

    logger.info(
        f"Fitted {num_intervals} transitions on {num_days} days (M={num_sensors}, rho={rho}, lambda={lam})"
    )
    return DlmModel(hyper=hyper, days_seen=num_days, G=G, P=P, H=H, grid=grid, layout=layout)


def update_with_day(model: DlmModel, new_day: DayVelocityMatrix) -> DlmModel:
    """
    Fold one new day into the model with the matrix inversion lemma.

    G <- lambda G + v_{k+1} v_k^T
    P <- P/lambda - (P/lambda) v_k v_k^T (P/lambda) / (1 + v_k^T (P/lambda) v_k)

    Returns:
        A new model; the argument is left untouched
    """
    expected = (model.num_sensors, model.num_intervals + 1)
    if new_day.values.shape != expected:
        raise DimensionError(
            f"Day {new_day.day_id} has shape {new_day.values.shape}, model expects {expected}",
            day=new_day.day_id,
        )
    _check_finite(new_day.values, f"Day {new_day.day_id}")

    lam = model.hyper.forgetting_factor
    current = new_day.values[:, :-1].T
    following = new_day.values[:, 1:].T

    G = lam * model.G + np.einsum("ki,kj->kij", following, current)
    scaled = model.P / lam
    gain = np.einsum("kij,kj->ki", scaled, current)
    denom = 1.0 + np.einsum("ki,ki->k", current, gain)
    P = scaled - np.einsum("ki,kj->kij", gain, gain) / denom[:, None, None]
    P = 0.5 * (P + np.swapaxes(P, 1, 2))
    H = np.matmul(G, P)

    logger.debug(f"Updated model with day {new_day.day_id} (days_seen={model.days_seen + 1})")
    return DlmModel(
        hyper=model.hyper,
        days_seen=model.days_seen + 1,
        G=G,
        P=P,
        H=H,
        grid=model.grid,
        layout=model.layout,
    )


def transition_at(model: DlmModel, k: int) -> np.ndarray:
    """Cached H_k for 0 <= k <= K-1."""
    if not 0 <= k < model.num_intervals:
        raise IndexRangeError(f"Transitions exist for k in 0..{model.num_intervals - 1}, got {k}", k=k)
    return model.H[k]


def propagate(model: DlmModel, k: int, steps: int) -> np.ndarray:
    """
    Product H_{k+i-1} ... H_{k+1} H_k over i = steps transitions.

    Raises:
        IndexRangeError: k + steps runs past the end of the grid
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if k < 0 or k + steps > model.num_intervals:
        raise IndexRangeError(
            f"Horizon k={k}, i={steps} exceeds grid with K={model.num_intervals}", k=k, steps=steps
        )
    product = model.H[k]
    for j in range(1, steps):
        product = model.H[k + j] @ product
    return product


def objective(dayset: DaySet, k: int, H: np.ndarray, hyper: Hyperparams) -> float:
    """
    Cost minimized at index k:
    rho lambda^N ||H||_F^2 + ||(V_{k+1} - H V_k) Lambda^(1/2)||_F^2
    """
    num_days = len(dayset)
    weights = forgetting_weights(num_days, hyper.forgetting_factor)
    residual = time_velocity_matrix(dayset, k + 1) - H @ time_velocity_matrix(dayset, k)
    penalty = hyper.regularization * hyper.forgetting_factor ** num_days * np.sum(H * H)
    return float(penalty + np.sum(residual * residual * weights))


def _metadata(model: DlmModel) -> Dict[str, Any]:
    layout = None
    if model.layout is not None:
        layout = {"positions": list(model.layout.positions), "sensor_ids": list(model.layout.sensor_ids)}
    return {
        "days_seen": model.days_seen,
        "grid": {
            "start_minute": model.grid.start_minute,
            "step_minutes": model.grid.step_minutes,
            "num_steps": model.grid.num_steps,
        },
        "hyper": model.hyper.to_dict(),
        "layout": layout,
        "num_intervals": model.num_intervals,
        "num_sensors": model.num_sensors,
    }


def save_model(model: DlmModel, path: Union[str, Path]) -> None:
    """
    Write the model container.

    Layout (little-endian): 8-byte magic, u16 major, u16 minor, u32 metadata
    length, UTF-8 JSON metadata, then G, P, H as float64 K x M x M arrays in C
    order, then the SHA-256 digest of every preceding byte.
    """
    meta = json.dumps(_metadata(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        [_HEADER.pack(MODEL_MAGIC, FORMAT_MAJOR, FORMAT_MINOR, len(meta)), meta]
        + [getattr(model, n).astype("<f8").tobytes(order="C") for n in ("G", "P", "H")]
    )
    digest = hashlib.sha256(body).digest()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(body + digest)
    os.replace(tmp_path, path)
    logger.info(f"Saved model ({model.num_intervals} x {model.num_sensors} x {model.num_sensors}) to {path}")


def load_model(path: Union[str, Path]) -> DlmModel:
    """
    Read a model container written by save_model.

    Raises:
        ModelFormatError: wrong magic or truncated file
        VersionError: written by a newer major format version
        ChecksumError: content does not match the stored digest, checked before
            any metadata is trusted (a cut-off file fails here too)
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + _DIGEST_SIZE:
        raise ModelFormatError(f"Model file {path} is truncated ({len(data)} bytes)", path=str(path))
    magic, major, minor, meta_len = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{path} is not a model file", path=str(path))
    if major != FORMAT_MAJOR:
        raise VersionError(
            f"Model file format {major}.{minor} is not supported (this build reads {FORMAT_MAJOR}.x)",
            path=str(path), major=major, minor=minor,
        )
    if len(data) < _HEADER.size + meta_len + _DIGEST_SIZE:
        raise ModelFormatError(f"Model file {path} is truncated", path=str(path))
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"Model file {path} failed its checksum", path=str(path))
    try:
        meta = json.loads(data[_HEADER.size:_HEADER.size + meta_len].decode("utf-8"))
        num_intervals, num_sensors = int(meta["num_intervals"]), int(meta["num_sensors"])
    except (ValueError, KeyError, TypeError):
        raise ModelFormatError(f"Model file {path} metadata is malformed", path=str(path)) from None

    block = num_intervals * num_sensors * num_sensors * 8
    expected_size = _HEADER.size + meta_len + 3 * block + _DIGEST_SIZE
    if len(data) < expected_size:
        raise ModelFormatError(
            f"Model file {path} is truncated ({len(data)} of {expected_size} bytes)", path=str(path)
        )
    if len(data) > expected_size:
        raise ModelFormatError(f"Model file {path} has {len(data) - expected_size} trailing bytes", path=str(path))

    shape = (num_intervals, num_sensors, num_sensors)
    offset = _HEADER.size + meta_len
    arrays = []
    for i in range(3):
        start = offset + i * block
        arrays.append(np.frombuffer(data, dtype="<f8", count=block // 8, offset=start).reshape(shape).astype(float))

    layout = None
    if meta["layout"] is not None:
        layout = SensorLayout(
            positions=tuple(meta["layout"]["positions"]), sensor_ids=tuple(meta["layout"]["sensor_ids"])
        )
    grid_meta = meta["grid"]
    return DlmModel(
        hyper=Hyperparams(**meta["hyper"]),
        days_seen=int(meta["days_seen"]),
        G=arrays[0],
        P=arrays[1],
        H=arrays[2],
        grid=TimeGrid(
            start_minute=grid_meta["start_minute"],
            step_minutes=grid_meta["step_minutes"],
            num_steps=int(grid_meta["num_steps"]),
        ),
        layout=layout,
    )


# TEST SUITE - scalar hand cases
if __name__ == "__main__":
    one_day = DaySet([DayVelocityMatrix("2012-01-02", [[2.0, 3.0]])])

    print("Test 1: rho = 0 recovers the ratio")
    model = fit_batch(one_day, Hyperparams(0.0, 1.0))
    assert abs(model.H[0, 0, 0] - 1.5) < 1e-12
    print(" PASS: H = 1.5\n")

    print("Test 2: rho = 1 shrinks toward zero")
    model = fit_batch(one_day, Hyperparams(1.0, 1.0))
    assert abs(model.H[0, 0, 0] - 1.2) < 1e-12
    print(" PASS: H = 6 / 5\n")

    print("Test 3: recursive update equals the two-day fit")
    updated = update_with_day(fit_batch(one_day, Hyperparams(0.0, 0.5)), DayVelocityMatrix("2012-01-03", [[4.0, 5.0]]))
    assert abs(updated.H[0, 0, 0] - 23.0 / 18.0) < 1e-12
    print(" PASS: H = 23 / 18\n")
