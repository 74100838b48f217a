import struct

import numpy as np
import pytest

from conftest import iso_day
from core import DaySet, DayVelocityMatrix, SensorLayout, TimeGrid
from dlm import (
    DlmModel,
    Hyperparams,
    fit_batch,
    init_model,
    load_model,
    objective,
    propagate,
    save_model,
    transition_at,
    update_with_day,
)
from errors import (
    ChecksumError,
    DimensionError,
    IndexRangeError,
    ModelFormatError,
    ParameterError,
    RankDeficiencyError,
    VersionError,
)
from ingest import SyntheticSpec, generate_synthetic


def _scalar_days(*pairs):
    return DaySet(DayVelocityMatrix(iso_day(d), [[a, b]]) for d, (a, b) in enumerate(pairs))


def _random_days(rng, num_days, num_sensors, num_points):
    return DaySet(
        DayVelocityMatrix(iso_day(d), rng.uniform(20.0, 70.0, size=(num_sensors, num_points)))
        for d in range(num_days)
    )


def _rel_frobenius(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_hyperparams_validation():
    with pytest.raises(ParameterError):
        Hyperparams(-1.0, 1.0)
    with pytest.raises(ParameterError):
        Hyperparams(1.0, 0.0)
    with pytest.raises(ParameterError):
        Hyperparams(1.0, 1.01)


def test_init_model_is_empty():
    grid = TimeGrid(num_steps=4)
    model = init_model(grid, SensorLayout((0.0, 1.0)), Hyperparams(4.0, 1.0))
    assert model.days_seen == 0
    np.testing.assert_array_equal(model.P, np.tile(np.diag([0.25, 0.25]), (3, 1, 1)))
    np.testing.assert_array_equal(transition_at(model, 2), np.zeros((2, 2)))


def test_init_model_needs_regularization():
    with pytest.raises(ParameterError):
        init_model(TimeGrid(num_steps=4), SensorLayout((0.0, 1.0)), Hyperparams(0.0, 1.0))


def test_scalar_fit_without_regularization():
    model = fit_batch(_scalar_days((2.0, 3.0)), Hyperparams(0.0, 1.0))
    assert transition_at(model, 0)[0, 0] == pytest.approx(1.5, rel=1e-12)


def test_scalar_fit_with_regularization():
    model = fit_batch(_scalar_days((2.0, 3.0)), Hyperparams(1.0, 1.0))
    assert model.H[0, 0, 0] == pytest.approx(1.2, rel=1e-12)


def test_scalar_fit_with_forgetting():
    model = fit_batch(_scalar_days((2.0, 3.0), (4.0, 5.0)), Hyperparams(0.0, 0.5))
    assert model.H[0, 0, 0] == pytest.approx(23.0 / 18.0, rel=1e-12)


def test_scalar_update_matches_two_day_fit():
    first = fit_batch(_scalar_days((2.0, 3.0)), Hyperparams(0.0, 0.5))
    updated = update_with_day(first, DayVelocityMatrix(iso_day(1), [[4.0, 5.0]]))
    assert updated.G[0, 0, 0] == pytest.approx(23.0)
    assert updated.P[0, 0, 0] == pytest.approx(1.0 / 18.0)
    assert updated.H[0, 0, 0] == pytest.approx(23.0 / 18.0)
    assert updated.days_seen == 2
    assert first.days_seen == 1


def test_noiseless_data_recover_true_transitions():
    rng = np.random.default_rng(3)
    truth = np.stack([np.eye(4) + 0.02 * rng.standard_normal((4, 4)) for _ in range(6)])
    spec = SyntheticSpec(transitions=truth, num_days=10, sigma=0.0, v0_range=(40.0, 70.0), seed=1)
    dayset, _ = generate_synthetic(spec)
    model = fit_batch(dayset, Hyperparams(0.0, 1.0))
    for k in range(6):
        assert _rel_frobenius(model.H[k], truth[k]) < 1e-8


def test_recursive_updates_equal_batch_fit():
    rng = np.random.default_rng(2024)
    for case in range(50):
        num_sensors = int(rng.integers(1, 9))
        num_days = int(rng.integers(1, 13))
        hyper = Hyperparams(float(rng.choice([0.5, 10.0])), float(rng.choice([1.0, 0.9])))
        days = _random_days(rng, num_days, num_sensors, 5)
        grid = TimeGrid(num_steps=5)
        if num_sensors >= 2:
            model = init_model(grid, SensorLayout.evenly_spaced(num_sensors, 1.0), hyper)
        else:
            model = DlmModel(
                hyper=hyper,
                days_seen=0,
                G=np.zeros((4, 1, 1)),
                P=np.full((4, 1, 1), 1.0 / hyper.regularization),
                H=np.zeros((4, 1, 1)),
                grid=grid,
            )
        for day in days:
            model = update_with_day(model, day)
        batch = fit_batch(days, hyper, grid=grid)
        assert model.days_seen == num_days
        for k in range(4):
            assert _rel_frobenius(model.H[k], batch.H[k]) < 1e-8, (case, k)


def test_fitted_transitions_minimize_the_objective():
    rng = np.random.default_rng(11)
    days = _random_days(rng, 10, 3, 4)
    hyper = Hyperparams(1.0, 0.95)
    model = fit_batch(days, hyper)
    for trial in range(1000):
        k = trial % 3
        best = objective(days, k, model.H[k], hyper)
        step = rng.standard_normal((3, 3))
        perturbed = model.H[k] + 1e-3 * step / np.linalg.norm(step)
        assert objective(days, k, perturbed, hyper) > best


def test_unregularized_fit_equals_pseudo_inverse():
    rng = np.random.default_rng(17)
    days = _random_days(rng, 8, 4, 5)
    model = fit_batch(days, Hyperparams(0.0, 1.0))
    cube = days.stack()
    for k in range(4):
        expected = cube[:, :, k + 1].T @ np.linalg.pinv(cube[:, :, k].T)
        assert _rel_frobenius(model.H[k], expected) < 1e-8


def test_regularization_shrinks_transitions():
    rng = np.random.default_rng(23)
    days = _random_days(rng, 10, 3, 4)
    norms = np.array(
        [np.linalg.norm(fit_batch(days, Hyperparams(rho, 0.95)).H, axis=(1, 2)) for rho in (0, 0.1, 1, 10, 100, 1e3, 1e4)]
    )
    assert np.all(np.diff(norms, axis=0) <= 1e-12 * norms[:-1])


def test_regularization_handles_fewer_days_than_sensors():
    rng = np.random.default_rng(5)
    days = _random_days(rng, 3, 6, 4)
    model = fit_batch(days, Hyperparams(0.5, 1.0))
    for k in range(3):
        assert np.linalg.eigvalsh(model.P[k]).min() > 0
    with pytest.raises(RankDeficiencyError) as excinfo:
        fit_batch(days, Hyperparams(0.0, 1.0))
    assert excinfo.value.k == 0


def test_h_equals_g_times_p():
    rng = np.random.default_rng(8)
    model = fit_batch(_random_days(rng, 9, 4, 5), Hyperparams(3.0, 0.99))
    for k in range(4):
        assert _rel_frobenius(model.G[k] @ model.P[k], model.H[k]) < 1e-10


def test_update_rejects_mismatched_day():
    model = fit_batch(_scalar_days((2.0, 3.0)), Hyperparams(1.0, 1.0))
    with pytest.raises(DimensionError):
        update_with_day(model, DayVelocityMatrix(iso_day(1), [[4.0, 5.0, 6.0]]))


def _scalar_chain(*values):
    num = len(values)
    H = np.array(values, dtype=float).reshape(num, 1, 1)
    return DlmModel(
        hyper=Hyperparams(1.0, 1.0),
        days_seen=1,
        G=H.copy(),
        P=np.ones((num, 1, 1)),
        H=H,
        grid=TimeGrid(num_steps=num + 1),
    )


def test_propagate_products():
    model = _scalar_chain(1.2, 1.5)
    assert propagate(model, 0, 1)[0, 0] == 1.2
    assert propagate(model, 0, 2)[0, 0] == pytest.approx(1.8)
    with pytest.raises(IndexRangeError):
        propagate(model, 1, 2)


def test_transition_at_last_index_is_out_of_range():
    model = _scalar_chain(1.2, 1.5)
    with pytest.raises(IndexRangeError):
        transition_at(model, 2)


def test_identity_propagation():
    model = DlmModel(
        hyper=Hyperparams(1.0, 1.0),
        days_seen=1,
        G=np.tile(np.eye(3), (5, 1, 1)),
        P=np.tile(np.eye(3), (5, 1, 1)),
        H=np.tile(np.eye(3), (5, 1, 1)),
        grid=TimeGrid(num_steps=6),
    )
    np.testing.assert_array_equal(propagate(model, 1, 4), np.eye(3))


@pytest.fixture
def saved_model(tmp_path):
    rng = np.random.default_rng(4)
    model = fit_batch(
        _random_days(rng, 5, 3, 4), Hyperparams(2.0, 0.99), grid=TimeGrid(num_steps=4),
        layout=SensorLayout((0.0, 1.0, 2.5), ("a", "b", "c")),
    )
    path = tmp_path / "model.dlm"
    save_model(model, path)
    return model, path


def test_model_file_round_trip(saved_model):
    model, path = saved_model
    assert load_model(path).equals(model)


def test_model_file_is_deterministic(saved_model, tmp_path):
    model, path = saved_model
    again = tmp_path / "again.dlm"
    save_model(model, again)
    assert again.read_bytes() == path.read_bytes()


def test_corrupted_byte_fails_checksum(saved_model):
    _, path = saved_model
    data = bytearray(path.read_bytes())
    data[-40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_model(path)


def test_corrupted_metadata_fails_checksum(saved_model):
    _, path = saved_model
    data = path.read_bytes()
    assert b'"num_sensors":3' in data
    path.write_bytes(data.replace(b'"num_sensors":3', b'"num_sensors":2'))
    with pytest.raises(ChecksumError):
        load_model(path)


def test_newer_major_version_is_refused(saved_model):
    _, path = saved_model
    data = bytearray(path.read_bytes())
    struct.pack_into("<H", data, 8, 2)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionError):
        load_model(path)


def test_not_a_model_file(tmp_path):
    path = tmp_path / "junk.dlm"
    path.write_bytes(b"not a model at all, just some bytes that are long enough" * 2)
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_truncated_model_file(saved_model):
    _, path = saved_model
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(ModelFormatError):
        load_model(path)
