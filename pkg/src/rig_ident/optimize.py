from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Termination = Literal["converged", "max_iterations", "stalled"]
Objective = Callable[[np.ndarray], float]

REFLECTION = 1.0
EXPANSION = 2.0
CONTRACTION = 0.5
SHRINK = 0.5

INITIAL_STEP = 0.05  # relative perturbation of each coordinate
ZERO_STEP = 2.5e-4  # absolute perturbation for a zero coordinate


class InvalidStartError(ValueError):
    pass


@dataclass
class SimplexState:
    vertices: np.ndarray  # (n + 1, n), sorted by value
    values: np.ndarray
    iteration: int = 0
    eval_count: int = 0

    @property
    def best_point(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def best_value(self) -> float:
        return float(self.values[0])

    @property
    def spread(self) -> float:
        return float(self.values[-1] - self.values[0])

    @property
    def diameter(self) -> float:
        return float(np.abs(self.vertices[1:] - self.vertices[0]).max())

    def sort(self) -> None:
        # stable: among equal values the earlier vertex stays ahead
        order = np.argsort(self.values, kind="stable")
        self.vertices = self.vertices[order]
        self.values = self.values[order]


@dataclass(frozen=True)
class OptimizerResult:
    best_point: np.ndarray
    best_value: float
    iterations: int
    evals: int
    termination: Termination
    start_value: float = math.nan  # objective at x0
    history: Tuple[float, ...] = ()  # best value at start and after every iteration
    moves: Tuple[str, ...] = field(default=(), compare=False)


def initial_simplex(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    vertices = np.tile(x0, (n + 1, 1))
    for i in range(n):
        step = INITIAL_STEP * abs(x0[i]) if x0[i] != 0 else ZERO_STEP
        vertices[i + 1, i] += step
    return vertices


class _Counted:
    def __init__(self, objective: Objective) -> None:
        self.objective = objective
        self.count = 0

    def __call__(self, x: np.ndarray) -> float:
        self.count += 1
        value = float(self.objective(np.array(x, dtype=float)))
        # non-finite trial points act as a penalty
        return value if math.isfinite(value) else math.inf


def _converged(state: SimplexState, f_tol: float, x_tol: float, f_floor: float) -> bool:
    return state.spread < f_tol * abs(state.best_value) + f_floor and state.diameter < x_tol


def _collapsed(state: SimplexState) -> bool:
    # every vertex within about one ulp of the best one
    scale = max(float(np.abs(state.best_point).max()), np.finfo(float).tiny)
    return state.diameter <= np.finfo(float).eps * scale


def _iterate(state: SimplexState, f: _Counted) -> str:
    vertices, values = state.vertices, state.values
    worst = vertices[-1].copy()
    centroid = vertices[:-1].mean(axis=0)

    xr = centroid + REFLECTION * (centroid - worst)
    fr = f(xr)
    if fr < values[0]:
        xe = centroid + EXPANSION * (xr - centroid)
        fe = f(xe)
        if fe < fr:
            vertices[-1], values[-1] = xe, fe
            return "expand"
        vertices[-1], values[-1] = xr, fr
        return "reflect"
    if fr < values[-2]:
        vertices[-1], values[-1] = xr, fr
        return "reflect"

    if fr < values[-1]:
        xc = centroid + CONTRACTION * (xr - centroid)
        fc = f(xc)
        if fc <= fr:
            vertices[-1], values[-1] = xc, fc
            return "contract_outside"
    else:
        xc = centroid + CONTRACTION * (worst - centroid)
        fc = f(xc)
        if fc < values[-1]:
            vertices[-1], values[-1] = xc, fc
            return "contract_inside"

    best = vertices[0].copy()
    for i in range(1, vertices.shape[0]):
        vertices[i] = best + SHRINK * (vertices[i] - best)
        values[i] = f(vertices[i])
    return "shrink"


def nelder_mead(
    objective: Objective,
    x0,
    max_iterations: int = 1000,
    *,
    f_tol: float = 1e-12,
    x_tol: float = 1e-10,
    f_floor: float = 1e-30,
    callback: Optional[Callable[[SimplexState], None]] = None,
) -> OptimizerResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
    The start simplex perturbs each coordinate of x0 by 5 % (2.5e-4 when the
    coordinate is zero). Stops when the value spread drops below
    ``f_tol * |best| + f_floor`` and the simplex diameter (max-norm distance of
    any vertex to the best one) below ``x_tol``, when the simplex can no
    longer move, or after ``max_iterations`` reflect/expand/contract/shrink
    cycles.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size < 1:
        raise ValueError("x0 must have at least one coordinate")
    if not np.all(np.isfinite(x0)):
        raise InvalidStartError(f"start point is not finite: {x0}")
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be >= 1, got {max_iterations}")

    f = _Counted(objective)
    f0 = f(x0)
    if not math.isfinite(f0):
        raise InvalidStartError(f"objective is not finite at the start point {x0}")

    vertices = initial_simplex(x0)
    values = np.empty(x0.size + 1)
    values[0] = f0
    for i in range(1, vertices.shape[0]):
        values[i] = f(vertices[i])
    state = SimplexState(vertices=vertices, values=values, eval_count=f.count)
    state.sort()

    history: List[float] = [state.best_value]
    moves: List[str] = []
    termination: Termination = "max_iterations"
    while True:
        if _converged(state, f_tol, x_tol, f_floor):
            termination = "converged"
            break
        if _collapsed(state):
            termination = "stalled"
            break
        if state.iteration >= max_iterations:
            termination = "max_iterations"
            break

        before = state.vertices.copy()
        moves.append(_iterate(state, f))
        state.iteration += 1
        state.eval_count = f.count
        state.sort()
        history.append(state.best_value)
        if callback is not None:
            callback(state)
        if np.array_equal(before, state.vertices):
            termination = "stalled"
            break

    logger.debug(
        "nelder-mead %s after %d iterations, %d evals, best %.6g",
        termination, state.iteration, f.count, state.best_value,
    )
    return OptimizerResult(
        best_point=state.best_point.copy(),
        best_value=state.best_value,
        iterations=state.iteration,
        evals=f.count,
        termination=termination,
        start_value=f0,
        history=tuple(history),
        moves=tuple(moves),
    )


def nelder_mead_budgeted(objective: Objective, x0, iteration_budget: int, **kwargs) -> OptimizerResult:
    """Nelder-Mead stopped after ``iteration_budget`` iterations unless it converges first."""
    if iteration_budget < 1:
        raise ValueError(f"iteration_budget must be >= 1, got {iteration_budget}")
    return nelder_mead(objective, x0, max_iterations=iteration_budget, **kwargs)
