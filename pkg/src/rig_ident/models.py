from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

# Order of the nine-parameter unknown vector.
ESTIMABLE: Tuple[str, ...] = ("jm", "cm", "ke", "rm", "kT", "lm", "ks", "j1", "tf")

STATE_NAMES: Tuple[str, ...] = ("theta1", "theta2", "q", "dtheta1", "dtheta2", "dq")
CHANNELS: Tuple[str, ...] = ("theta1", "theta2", "dtheta1", "dtheta2")
# Columns of the state vector that are observable, in CHANNELS order.
CHANNEL_COLUMNS: Tuple[int, ...] = (0, 1, 3, 4)


def _frozen_array(values, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RigParameters:
    """Physical parameters of the shaft/rotor/motor rig in SI units.

    Defaults are the nominal values of the rig. No validation happens here;
    ``assemble_system`` rejects non-physical sets so that an optimizer may
    still propose them.
    """

    j1: float = 28.3e-3
    ks: float = 3.0e-1
    t1: float = 0.0
    jm: float = 4.0e-4
    lm: float = 1.1e-3
    rm: float = 3.3e-1
    kT: float = 1.2e-1
    ke: float = 601.6e-4
    tf: float = 1.0e-1
    cm: float = 18.0e-5
    im: float = 1.0 / 8.0
    v: float = 8.0
    # metadata, never enters the dynamics
    ls: float = 2.4
    Ds: float = 3.0e-3
    mr1: float = 6.4
    rr1: float = 188.0e-3

    @classmethod
    def nominal(cls) -> "RigParameters":
        return cls()

    @classmethod
    def field_names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def with_values(self, **values: float) -> "RigParameters":
        unknown = sorted(set(values) - set(self.field_names()))
        if unknown:
            raise KeyError(f"unknown parameter(s): {', '.join(unknown)}")
        return replace(self, **{k: float(v) for k, v in values.items()})

    def values_of(self, names: Iterable[str]) -> np.ndarray:
        return np.array([getattr(self, name) for name in names], dtype=float)


@dataclass(frozen=True)
class ParameterMask:
    # ordered; the order is the coordinate order handed to the optimizer
    free: Tuple[str, ...]

    def __post_init__(self) -> None:
        free = tuple(self.free)
        bad = [name for name in free if name not in ESTIMABLE]
        if bad:
            raise ValueError(f"parameter(s) cannot be estimated: {', '.join(bad)}")
        if len(set(free)) != len(free):
            raise ValueError(f"duplicate names in mask: {free}")
        if not free:
            raise ValueError("mask must free at least one parameter")
        object.__setattr__(self, "free", free)

    def __contains__(self, name: object) -> bool:
        return name in self.free

    def __len__(self) -> int:
        return len(self.free)


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    a: np.ndarray
    f: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _frozen_array(self.a, (6, 6)))
        object.__setattr__(self, "f", _frozen_array(self.f, (6,)))

    def augmented(self) -> np.ndarray:
        """7x7 matrix [[A, F], [0, 0]] that turns the affine system into a linear one."""
        m = np.zeros((7, 7))
        m[:6, :6] = self.a
        m[:6, 6] = self.f
        return m


@dataclass(frozen=True)
class StateVector:
    theta1: float = 0.0
    theta2: float = 0.0
    q: float = 0.0
    dtheta1: float = 0.0
    dtheta2: float = 0.0
    dq: float = 0.0

    def __post_init__(self) -> None:
        for name in STATE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"state component {name} is not finite")

    @classmethod
    def from_array(cls, values) -> "StateVector":
        arr = np.asarray(values, dtype=float).reshape(6)
        return cls(*(float(x) for x in arr))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_NAMES], dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    t_end: float = 10.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and math.isfinite(self.t_end)):
            raise ValueError("solver dt and t_end must be finite")
        if not (0.0 < self.dt <= self.t_end):
            raise ValueError(f"solver grid needs 0 < dt <= t_end (dt={self.dt}, t_end={self.t_end})")

    @property
    def n_steps(self) -> int:
        # tolerate t_end/dt landing a hair below an integer
        return int(math.floor(self.t_end / self.dt + 1e-9))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class Trajectory:
    t0: float
    dt: float
    states: np.ndarray  # shape (n, 6), STATE_NAMES columns

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] != 6 or states.shape[0] == 0:
            raise ValueError(f"trajectory states must be a non-empty (n, 6) array, got {states.shape}")
        if not self.dt > 0:
            raise ValueError("trajectory dt must be positive")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt

    def state(self, k: int) -> StateVector:
        return StateVector.from_array(self.states[k])

    @property
    def final(self) -> StateVector:
        return self.state(len(self) - 1)

    def component(self, name: str) -> np.ndarray:
        return self.states[:, STATE_NAMES.index(name)]


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    times: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    dtheta1: np.ndarray
    dtheta2: np.ndarray
    sigma_n: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        times = _frozen_array(self.times)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("measurement set has no samples")
        if np.any(np.diff(times) <= 0):
            raise ValueError("measurement times must be strictly increasing")
        object.__setattr__(self, "times", times)
        for name in CHANNELS:
            channel = _frozen_array(getattr(self, name))
            if channel.shape != times.shape:
                raise ValueError(f"channel {name} has {channel.shape[0] if channel.ndim else 0} samples, expected {times.size}")
            object.__setattr__(self, name, channel)
        if not self.sigma_n >= 0:
            raise ValueError(f"sigma_n must be >= 0, got {self.sigma_n}")

    def __len__(self) -> int:
        return self.times.size

    def channel_matrix(self) -> np.ndarray:
        """Samples as an (n, 4) array in CHANNELS order."""
        return np.column_stack([getattr(self, name) for name in CHANNELS])

    @classmethod
    def from_matrix(cls, times, matrix, *, sigma_n: float = 0.0, seed: Optional[int] = None) -> "MeasurementSet":
        matrix = np.asarray(matrix, dtype=float)
        return cls(times, *(matrix[:, i] for i in range(len(CHANNELS))), sigma_n=sigma_n, seed=seed)
