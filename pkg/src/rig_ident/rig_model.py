from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .kvfile import KeyValueSyntaxError, format_key_values, read_key_values
from .models import RigParameters, SystemMatrices

logger = logging.getLogger(__name__)

POSITIVE: Tuple[str, ...] = ("j1", "jm", "lm", "rm", "kT", "ke", "cm", "ks")
NON_NEGATIVE: Tuple[str, ...] = ("tf", "t1")


class InvalidParameterError(ValueError):
    def __init__(self, name: str, value: float, rule: str) -> None:
        super().__init__(f"invalid parameter {name}={value!r}: must be {rule}")
        self.name = name
        self.value = value


class ParameterFileError(ValueError):
    pass


def validate_parameters(p: RigParameters) -> None:
    for name in RigParameters.field_names():
        value = getattr(p, name)
        if not math.isfinite(value):
            raise InvalidParameterError(name, value, "finite")
    for name in POSITIVE:
        if not getattr(p, name) > 0:
            raise InvalidParameterError(name, getattr(p, name), "> 0")
    for name in NON_NEGATIVE:
        if not getattr(p, name) >= 0:
            raise InvalidParameterError(name, getattr(p, name), ">= 0")
    if not 0 < p.im <= 1:
        raise InvalidParameterError("im", p.im, "in (0, 1]")


def assemble_system(p: RigParameters, *, validate: bool = True) -> SystemMatrices:
    """Build A and F of y' = A y + F, y = (theta1, theta2, q, dtheta1, dtheta2, dq).

    Rows come from the rotor-1 torque balance, the rotor-2 balance with the
    motor folded in through the gearbox, and the motor circuit with
    theta3 = theta2 / im. ``validate=False`` skips the physical checks
    (limit cases such as ks = 0).
    """
    if validate:
        validate_parameters(p)

    a = np.zeros((6, 6))
    f = np.zeros(6)
    a[0, 3] = a[1, 4] = a[2, 5] = 1.0

    # rotor 1: j1 th1'' + ks (th1 - th2) = -t1
    a[3, 0] = -p.ks / p.j1
    a[3, 1] = p.ks / p.j1
    f[3] = -p.t1 / p.j1

    # rotor 2: jm th2'' - im^2 ks (th1 - th2) - im kT q' + cm th2' = -im tf
    twist = p.im ** 2 * p.ks / p.jm
    a[4, 0] = twist
    a[4, 1] = -twist
    a[4, 4] = -p.cm / p.jm
    a[4, 5] = p.im * p.kT / p.jm
    f[4] = -p.im * p.tf / p.jm

    # motor circuit: lm q'' + rm q' + (ke / im) th2' = v
    a[5, 4] = -p.ke / (p.im * p.lm)
    a[5, 5] = -p.rm / p.lm
    f[5] = p.v / p.lm

    return SystemMatrices(a=a, f=f)


def motor_angle(theta2: float, p: RigParameters) -> float:
    if not p.im > 0:
        raise InvalidParameterError("im", p.im, "> 0")
    return theta2 / p.im


def equation_residuals(p: RigParameters, y, ydot) -> np.ndarray:
    """Residuals of the three second-order balances for a state and its derivative.

    Used to audit ``assemble_system``: for ydot = A y + F all three vanish.
    """
    th1, th2, _q, w1, w2, i = np.asarray(y, dtype=float)
    _, _, _, a1, a2, di = np.asarray(ydot, dtype=float)
    rotor1 = p.j1 * a1 + p.ks * (th1 - th2) + p.t1
    rotor2 = p.jm * a2 - p.im ** 2 * p.ks * (th1 - th2) - p.im * p.kT * i + p.cm * w2 + p.im * p.tf
    circuit = p.lm * di + p.rm * i + (p.ke / p.im) * w2 - p.v
    return np.array([rotor1, rotor2, circuit])


def load_parameters(path: Union[str, Path], base: RigParameters | None = None) -> RigParameters:
    """Read a flat ``name = value`` parameter file.

    Unknown names are rejected; names left out keep the value from ``base``
    (nominal by default).
    """
    path = Path(path)
    if not path.exists():
        raise ParameterFileError(f"parameter file not found: {path}")
    try:
        entries = read_key_values(path)
    except KeyValueSyntaxError as exc:
        raise ParameterFileError(str(exc)) from exc

    known = set(RigParameters.field_names())
    values: Dict[str, float] = {}
    for line_no, key, raw in entries:
        if key not in known:
            raise ParameterFileError(f"{path}:{line_no}: unknown parameter {key!r}")
        try:
            values[key] = float(raw)
        except ValueError as exc:
            raise ParameterFileError(f"{path}:{line_no}: value of {key!r} is not a number: {raw!r}") from exc

    missing = sorted(known - set(values))
    if missing:
        logger.debug("%s: %d parameter(s) not given, using defaults: %s", path, len(missing), ", ".join(missing))
    return (base or RigParameters.nominal()).with_values(**values)


def save_parameters(p: RigParameters, path: Union[str, Path]) -> None:
    items = [(name, repr(float(value))) for name, value in p.as_dict().items()]
    Path(path).write_text(format_key_values(items), encoding="utf-8")
