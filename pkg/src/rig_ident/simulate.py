from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .models import STATE_NAMES, SolverConfig, StateVector, SystemMatrices, Trajectory

logger = logging.getLogger(__name__)

# pivot magnitude below this fraction of the step matrix max-norm counts as singular
SINGULAR_PIVOT_RATIO = 1e-14
# scaled matrix norm bound for the truncated Taylor series
_TAYLOR_NORM = 0.5
_TAYLOR_MAX_TERMS = 30


class SingularStepError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int) -> None:
        super().__init__(f"trajectory became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class ConvergenceOrder:
    dt: float
    errors: Tuple[float, float, float]  # max-abs error at dt, dt/2, dt/4
    order: float
    refined_order: float
    exact: bool = False


def _factor_step(sys: SystemMatrices, dt: float):
    eye = np.eye(6)
    lhs = eye - 0.5 * dt * sys.a
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(lhs, check_finite=False)
    threshold = SINGULAR_PIVOT_RATIO * np.abs(lhs).sum(axis=1).max()
    smallest = float(np.abs(np.diag(lu)).min())
    if not smallest > threshold:
        raise SingularStepError(
            f"step matrix I - (dt/2)A is singular for dt={dt} (smallest pivot {smallest:.3e}, threshold {threshold:.3e})"
        )
    return (lu, piv), eye + 0.5 * dt * sys.a


def integrate_trapezoidal(sys: SystemMatrices, cfg: SolverConfig) -> Trajectory:
    """Fixed-step implicit trapezoidal rule from the zero state at t = 0.

    Each step solves (I - dt/2 A) y+ = (I + dt/2 A) y + dt F. A and F are
    constant, so the step matrix is factored once and the solve is applied
    to the right-hand side operators up front.
    """
    h = cfg.dt
    n = cfg.n_steps
    factor, rhs = _factor_step(sys, h)
    propagator = lu_solve(factor, rhs, check_finite=False)
    offset = lu_solve(factor, h * sys.f, check_finite=False)

    states = np.zeros((n + 1, 6))
    y = states[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            y = propagator @ y + offset
            states[k + 1] = y

    finite = np.isfinite(states).all(axis=1)
    if not finite.all():
        step = int(np.argmin(finite))
        raise DivergenceError(step)
    return Trajectory(t0=0.0, dt=h, states=states)


def matrix_exponential(m) -> np.ndarray:
    """exp(m) by scaling and squaring with a truncated Taylor series."""
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    norm = float(np.abs(m).sum(axis=0).max()) if m.size else 0.0
    squarings = 0 if norm <= _TAYLOR_NORM else int(math.ceil(math.log2(norm / _TAYLOR_NORM)))
    scaled = m / 2.0 ** squarings

    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, _TAYLOR_MAX_TERMS + 1):
        term = term @ scaled / k
        result = result + term
        if np.abs(term).sum(axis=0).max() <= np.finfo(float).eps * np.abs(result).sum(axis=0).max():
            break
    for _ in range(squarings):
        result = result @ result
    return result


def exact_solution(sys: SystemMatrices, t: float) -> StateVector:
    """State at time t from the zero initial state, via the augmented 7x7 exponential."""
    if not t >= 0:
        raise ValueError(f"time must be >= 0, got {t}")
    # keep the forcing column at the same scale as A to limit squarings
    scale = float(np.abs(sys.f).max()) or 1.0
    m = np.zeros((7, 7))
    m[:6, :6] = sys.a
    m[:6, 6] = sys.f / scale
    z = matrix_exponential(m * t)[:6, 6] * scale
    return StateVector.from_array(z)


def oracle_deviation(sys: SystemMatrices, traj: Trajectory, samples: int = 101, floor: float = 1e-9) -> np.ndarray:
    """Per-component max error against the exact solution, relative to the component's peak.

    ``samples`` grid points (evenly spread, always including the last) are checked.
    """
    idx = np.unique(np.linspace(0, len(traj) - 1, num=min(samples, len(traj))).round().astype(int))
    exact = np.array([exact_solution(sys, float(traj.times[k])).as_array() for k in idx])
    numeric = traj.states[idx]
    scale = np.maximum(np.abs(exact).max(axis=0), floor)
    return np.abs(numeric - exact).max(axis=0) / scale


def _error_at(sys: SystemMatrices, t: float, dt: float, reference: np.ndarray) -> float:
    cfg = SolverConfig(dt=dt, t_end=t)
    if abs(cfg.n_steps * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t={t} is not a whole number of steps of dt={dt}")
    traj = integrate_trapezoidal(sys, cfg)
    return float(np.abs(traj.states[-1] - reference).max())


def richardson_order_check(sys: SystemMatrices, t: float, dt: float = 1e-2) -> ConvergenceOrder:
    """Observed order of the trapezoidal rule at time t from runs with dt, dt/2, dt/4."""
    if not t > 0:
        raise ValueError(f"time must be > 0, got {t}")
    reference = exact_solution(sys, t).as_array()
    errors = tuple(_error_at(sys, t, dt / 2 ** k, reference) for k in range(3))
    logger.debug("richardson errors at t=%g: %s", t, errors)

    if errors[0] == 0.0 and errors[1] == 0.0:
        return ConvergenceOrder(dt=dt, errors=errors, order=math.inf, refined_order=math.inf, exact=True)
    order = math.log2(errors[0] / errors[1]) if errors[1] > 0 else math.inf
    refined = math.log2(errors[1] / errors[2]) if errors[2] > 0 else math.inf
    return ConvergenceOrder(dt=dt, errors=errors, order=order, refined_order=refined)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(traj.states), columns=list(STATE_NAMES))
    frame.insert(0, "t", traj.times)
    return frame


def save_trajectory(traj: Trajectory, path: Union[str, Path]) -> None:
    trajectory_frame(traj).to_csv(path, index=False, float_format="%.17g")
