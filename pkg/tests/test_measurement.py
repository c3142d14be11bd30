from __future__ import annotations

import numpy as np
import pytest

from src.rig_ident.measurement import (
    MeasurementFormatError,
    add_noise,
    grid_indices,
    load_measurements,
    observe,
    observe_at,
    save_measurements,
    synthesize,
)
from src.rig_ident.models import CHANNEL_COLUMNS, MeasurementSet
from src.rig_ident.rig_model import assemble_system
from src.rig_ident.simulate import integrate_trapezoidal


@pytest.fixture
def clean(nominal, short_solver) -> MeasurementSet:
    return observe(integrate_trapezoidal(assemble_system(nominal), short_solver))


def test_observe_drops_charge_columns(nominal, short_solver):
    traj = integrate_trapezoidal(assemble_system(nominal), short_solver)
    m = observe(traj)
    assert len(m) == len(traj)
    np.testing.assert_array_equal(m.channel_matrix(), traj.states[:, list(CHANNEL_COLUMNS)])
    np.testing.assert_array_equal(m.theta2, traj.component("theta2"))
    assert m.sigma_n == 0.0


def test_observe_at_grid_times(nominal, short_solver):
    traj = integrate_trapezoidal(assemble_system(nominal), short_solver)
    rows = observe_at(traj, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(rows[1], traj.states[500, list(CHANNEL_COLUMNS)])
    with pytest.raises(ValueError, match="not on the solver grid"):
        observe_at(traj, [0.0005])
    with pytest.raises(ValueError):
        observe_at(traj, [2.0])


def test_grid_indices():
    np.testing.assert_array_equal(grid_indices([0.0, 0.002, 0.003], 0.0, 1e-3, 10), [0, 2, 3])


def test_zero_noise_is_identity(clean):
    noisy = add_noise(clean, 0.0, 5)
    np.testing.assert_array_equal(noisy.channel_matrix(), clean.channel_matrix())
    assert noisy.seed == 5


def test_noise_is_seeded_pcg64(clean):
    a = add_noise(clean, 0.01, 42)
    b = add_noise(clean, 0.01, 42)
    c = add_noise(clean, 0.01, 43)
    np.testing.assert_array_equal(a.channel_matrix(), b.channel_matrix())
    assert not np.array_equal(a.channel_matrix(), c.channel_matrix())

    draws = np.random.Generator(np.random.PCG64(42)).standard_normal((len(clean), 4))
    np.testing.assert_array_equal(a.channel_matrix(), clean.channel_matrix() + 0.01 * draws)


@pytest.fixture
def resting() -> MeasurementSet:
    """25 000 samples of four zero channels, 10^5 values in all."""
    times = np.arange(25_000) * 1e-3
    return MeasurementSet.from_matrix(times, np.zeros((times.size, 4)))


def test_noise_statistics(resting):
    noise = add_noise(resting, 0.1, 1).channel_matrix()
    assert noise.size == 100_000
    assert 0.098 <= noise.std() <= 0.102
    assert abs(noise.mean()) <= 0.002


def test_noise_has_no_lag_one_correlation(resting):
    series = add_noise(resting, 0.1, 2).channel_matrix().T.ravel()
    series = series - series.mean()
    lag1 = np.dot(series[:-1], series[1:]) / np.dot(series, series)
    assert abs(lag1) < 0.02


def test_noise_on_one_channel_leaves_the_others(clean):
    full = add_noise(clean, 0.1, 3)
    only = add_noise(clean, 0.1, 3, channels=["theta1"])
    np.testing.assert_array_equal(only.theta1, full.theta1)
    np.testing.assert_array_equal(only.theta2, clean.theta2)
    np.testing.assert_array_equal(only.dtheta1, clean.dtheta1)
    np.testing.assert_array_equal(only.dtheta2, clean.dtheta2)
    with pytest.raises(ValueError, match="unknown channel"):
        add_noise(clean, 0.1, 3, channels=["q"])


def test_noise_rejects_bad_arguments(clean):
    with pytest.raises(ValueError):
        add_noise(clean, -0.1, 0)
    with pytest.raises(ValueError):
        add_noise(clean, 0.1, -1)
    with pytest.raises(ValueError):
        add_noise(clean, 0.1, 2 ** 64)


def test_measurement_set_validation():
    with pytest.raises(ValueError):
        MeasurementSet(np.array([]), *(np.array([]) for _ in range(4)))
    with pytest.raises(ValueError):
        MeasurementSet(np.array([0.0, 0.0]), *(np.zeros(2) for _ in range(4)))
    with pytest.raises(ValueError):
        MeasurementSet(np.array([0.0, 1.0]), np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2))


def test_file_roundtrip_is_exact(tmp_path, nominal, short_solver):
    data = synthesize(nominal, short_solver, 0.01, 9)
    path = tmp_path / "measurements.csv"
    save_measurements(data, path)

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# sigma_n=0.01"
    assert lines[1] == "# seed=9"
    assert lines[2] == "t,theta1,theta2,dtheta1,dtheta2"

    back = load_measurements(path)
    np.testing.assert_array_equal(back.times, data.times)
    np.testing.assert_array_equal(back.channel_matrix(), data.channel_matrix())
    assert back.sigma_n == 0.01 and back.seed == 9


def test_plain_csv_without_provenance(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("t,theta1,theta2,dtheta1,dtheta2,comment\n0,0,0,0,0,a\n0.001,1,2,3,4,b\n", encoding="utf-8")
    m = load_measurements(path)
    assert len(m) == 2
    assert m.sigma_n == 0.0 and m.seed is None
    np.testing.assert_array_equal(m.channel_matrix()[1], [1, 2, 3, 4])


@pytest.mark.parametrize(
    "text, match, row, column",
    [
        ("t,theta1,theta2,dtheta1\n0,0,0,0\n", "missing column", None, "dtheta2"),
        ("t,theta1,theta2,dtheta1,dtheta2\n0,0,0,0,0\n0.002,0,0,0,0\n0.001,0,0,0,0\n", "non-monotonic time", 3, "t"),
        ("t,theta1,theta2,dtheta1,dtheta2\n0,0,0,0,0\n0.001,0,x,0,0\n", "non-numeric", 2, "theta2"),
        ("t,theta1,theta2,dtheta1,dtheta2\n", "no samples", None, None),
        ("# sigma_n=0.1\n", "no samples", None, None),
    ],
)
def test_malformed_files(tmp_path, text, match, row, column):
    path = tmp_path / "bad.csv"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(MeasurementFormatError, match=match) as err:
        load_measurements(path)
    assert err.value.row == row
    assert err.value.column == column


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_measurements(tmp_path / "nothing.csv")


@pytest.mark.parametrize(
    "header, where",
    [("# sigma_n=abc\n", "line 1: bad sigma_n"), ("# sigma_n=0.1\n# seed=1.5\n", "line 2: bad seed")],
)
def test_bad_provenance_line(tmp_path, header, where):
    path = tmp_path / "bad.csv"
    path.write_text(header + "t,theta1,theta2,dtheta1,dtheta2\n0,0,0,0,0\n", encoding="utf-8")
    with pytest.raises(MeasurementFormatError, match=where):
        load_measurements(path)
