from __future__ import annotations

import numpy as np
import pytest

from src.rig_ident.models import ESTIMABLE, ParameterMask, RigParameters
from src.rig_ident.rig_model import (
    InvalidParameterError,
    ParameterFileError,
    assemble_system,
    equation_residuals,
    load_parameters,
    motor_angle,
    save_parameters,
    validate_parameters,
)


def test_nominal_values(nominal):
    assert nominal.j1 == 28.3e-3
    assert nominal.ks == 0.3
    assert nominal.t1 == 0.0
    assert nominal.jm == 4.0e-4
    assert nominal.lm == 1.1e-3
    assert nominal.rm == 0.33
    assert nominal.kT == 0.12
    assert nominal.ke == 601.6e-4
    assert nominal.tf == 0.1
    assert nominal.cm == 18.0e-5
    assert nominal.im == 0.125
    assert nominal.v == 8.0
    assert (nominal.ls, nominal.Ds, nominal.mr1, nominal.rr1) == (2.4, 3.0e-3, 6.4, 0.188)


def test_with_values_rejects_unknown_name(nominal):
    with pytest.raises(KeyError):
        nominal.with_values(kt=0.1)


def test_mask_validation():
    assert len(ParameterMask(ESTIMABLE)) == 9
    assert "cm" in ParameterMask(("cm", "ke"))
    with pytest.raises(ValueError):
        ParameterMask(("cm", "cm"))
    with pytest.raises(ValueError):
        ParameterMask(("v",))
    with pytest.raises(ValueError):
        ParameterMask(())


def test_assembled_entries(nominal):
    p = nominal
    sys = assemble_system(p)
    a, f = sys.a, sys.f

    assert a[0, 3] == a[1, 4] == a[2, 5] == 1.0
    assert a[3, 0] == pytest.approx(-p.ks / p.j1)
    assert a[3, 1] == pytest.approx(p.ks / p.j1)
    # gearbox enters the twist coupling squared
    assert a[4, 0] == pytest.approx(p.im ** 2 * p.ks / p.jm)
    assert a[4, 1] == pytest.approx(-p.im ** 2 * p.ks / p.jm)
    assert a[4, 4] == pytest.approx(-p.cm / p.jm)
    assert a[4, 5] == pytest.approx(p.im * p.kT / p.jm)
    # back-emf divides by the gear factor
    assert a[5, 4] == pytest.approx(-p.ke / (p.im * p.lm))
    assert a[5, 5] == pytest.approx(-p.rm / p.lm)
    assert np.count_nonzero(a[:3, :3]) == 0
    assert np.count_nonzero(a[:, 2]) == 0

    np.testing.assert_allclose(f, [0, 0, 0, -p.t1 / p.j1, -p.im * p.tf / p.jm, p.v / p.lm])


def test_assembled_system_satisfies_balances(nominal, perturbed):
    rng = np.random.default_rng(3)
    for p in (nominal, perturbed, nominal.with_values(t1=0.05, im=0.5)):
        sys = assemble_system(p)
        for _ in range(5):
            y = rng.standard_normal(6)
            ydot = sys.a @ y + sys.f
            np.testing.assert_array_less(np.abs(equation_residuals(p, y, ydot)), 1e-12)
            np.testing.assert_allclose(ydot[:3], y[3:])


def test_matrices_are_read_only(nominal):
    sys = assemble_system(nominal)
    with pytest.raises(ValueError):
        sys.a[0, 0] = 1.0


@pytest.mark.parametrize(
    "change, name",
    [
        ({"ks": 0.0}, "ks"),
        ({"j1": -1.0}, "j1"),
        ({"lm": float("nan")}, "lm"),
        ({"tf": -0.1}, "tf"),
        ({"t1": -1e-3}, "t1"),
        ({"im": 1.5}, "im"),
        ({"im": 0.0}, "im"),
        ({"v": float("inf")}, "v"),
    ],
)
def test_invalid_parameters(nominal, change, name):
    with pytest.raises(InvalidParameterError) as err:
        assemble_system(nominal.with_values(**change))
    assert err.value.name == name


def test_limit_case_without_validation(nominal):
    sys = assemble_system(nominal.with_values(ks=0.0), validate=False)
    assert sys.a[3, 0] == 0.0 and sys.a[4, 1] == 0.0
    with pytest.raises(InvalidParameterError):
        validate_parameters(nominal.with_values(ks=0.0))


def test_gearbox_unit_factor(nominal):
    validate_parameters(nominal.with_values(im=1.0))


def test_motor_angle(nominal):
    assert motor_angle(1.0, nominal) == 8.0
    assert motor_angle(0.0, nominal) == 0.0


def test_parameter_file_roundtrip(tmp_path, perturbed):
    path = tmp_path / "truth.txt"
    save_parameters(perturbed, path)
    assert load_parameters(path) == perturbed


def test_parameter_file_partial(tmp_path, nominal):
    path = tmp_path / "p.txt"
    path.write_text("# shaft only\nks = 0.33\ncm = 2e-4  # damping\n", encoding="utf-8")
    p = load_parameters(path)
    assert p.ks == 0.33 and p.cm == 2e-4
    assert p.jm == nominal.jm


@pytest.mark.parametrize(
    "text, match",
    [
        ("ks = 0.3\nfoo = 1\n", "unknown parameter 'foo'"),
        ("ks = stiff\n", "not a number"),
        ("ks 0.3\n", "key = value"),
        ("ks = 0.3\nks = 0.4\n", "duplicate"),
    ],
)
def test_parameter_file_errors(tmp_path, text, match):
    path = tmp_path / "bad.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ParameterFileError, match=match):
        load_parameters(path)


def test_missing_parameter_file(tmp_path):
    path = tmp_path / "absent.txt"
    with pytest.raises(ParameterFileError, match="absent.txt"):
        load_parameters(path)
