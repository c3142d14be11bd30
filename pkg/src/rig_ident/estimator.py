from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .measurement import GRID_TOLERANCE, grid_indices, observe_at, synthesize
from .models import CHANNEL_COLUMNS, CHANNELS, ESTIMABLE, MeasurementSet, ParameterMask, RigParameters, SolverConfig
from .optimize import InvalidStartError, OptimizerResult, nelder_mead, nelder_mead_budgeted
from .rig_model import InvalidParameterError, assemble_system
from .simulate import DivergenceError, SingularStepError, integrate_trapezoidal

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[Dict[str, Any]], None]

# Initial-guess column of the nine-parameter experiment.
NINEFOLD_GUESSES: Dict[str, float] = {
    "jm": 4.0e-4,
    "cm": 19.0e-5,
    "ke": 601.6e-4,
    "kT": 1.2e-1,
    "rm": 3.3e-1,
    "lm": 1.1e-3,
    "ks": 2.6e-1,
    "j1": 28.3e-3,
    "tf": 1.0e-1,
}
# Guesses of the two-parameter verification.
VERIFICATION_GUESSES: Dict[str, float] = {"cm": 1.0e-3, "ke": 1.0e-2}
VERIFICATION_SIGMAS: Tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)

DEFAULT_STEADY_TOL = 1e-6
DEFAULT_MAX_CYCLES = 100
DEFAULT_BUDGET = 10


@dataclass(frozen=True)
class PairSchedule:
    pairs: Tuple[Tuple[str, str], ...] = (
        ("tf", "jm"),
        ("jm", "cm"),
        ("cm", "ke"),
        ("ke", "kT"),
        ("kT", "rm"),
        ("rm", "lm"),
        ("lm", "ks"),
        ("ks", "j1"),
        ("j1", "tf"),
    )

    def __post_init__(self) -> None:
        pairs = tuple((str(a), str(b)) for a, b in self.pairs)
        if not pairs:
            raise ValueError("pair schedule is empty")
        for k, (first, second) in enumerate(pairs):
            nxt = pairs[(k + 1) % len(pairs)]
            if first == second:
                raise ValueError(f"stage {k + 1} frees {first} twice")
            if second != nxt[0]:
                raise ValueError(f"stage {k + 1} {pairs[k]} does not chain into stage {(k + 1) % len(pairs) + 1} {nxt}")
        firsts = [first for first, _ in pairs]
        if len(set(firsts)) != len(firsts):
            raise ValueError("pair schedule must visit every parameter once per cycle")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(first for first, _ in self.pairs)

    def stage(self, index: int) -> Tuple[str, str]:
        """Pair freed at 1-based stage ``index``; stages wrap around the cycle."""
        if index < 1:
            raise ValueError(f"stage index starts at 1, got {index}")
        return self.pairs[(index - 1) % len(self.pairs)]


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    data: MeasurementSet
    fixed: RigParameters
    mask: ParameterMask
    solver: SolverConfig
    sigma_n: float = 1.0
    indices: np.ndarray = field(init=False, repr=False)
    observed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_n) and self.sigma_n > 0):
            raise ValueError(f"misfit sigma_n must be > 0, got {self.sigma_n}")
        idx = grid_indices(self.data.times, 0.0, self.solver.dt, self.solver.n_steps + 1, tol=GRID_TOLERANCE)
        idx.setflags(write=False)
        observed = self.data.channel_matrix()
        observed.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "observed", observed)

    def with_mask(self, mask: ParameterMask, fixed: Optional[RigParameters] = None) -> "EstimationProblem":
        return EstimationProblem(
            data=self.data, fixed=fixed or self.fixed, mask=mask, solver=self.solver, sigma_n=self.sigma_n
        )

    def candidate(self, values) -> RigParameters:
        return self.fixed.with_values(**dict(zip(self.mask.free, (float(v) for v in values))))


def channel_misfit(observed: np.ndarray, predicted: np.ndarray, sigma_n: float) -> float:
    """(1 / sigma_n^2) times the sum of squared residuals over all samples and channels."""
    residual = np.asarray(observed, dtype=float) - np.asarray(predicted, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(np.sum(residual * residual))
    return total / sigma_n ** 2


def predict(params: RigParameters, prob: EstimationProblem) -> np.ndarray:
    traj = integrate_trapezoidal(assemble_system(params), prob.solver)
    return traj.states[np.ix_(prob.indices, CHANNEL_COLUMNS)]


def misfit(values, prob: EstimationProblem) -> float:
    """Misfit of the masked parameters set to ``values``; +inf for non-physical candidates."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(prob.mask),):
        raise ValueError(f"expected {len(prob.mask)} values for {prob.mask.free}, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        return math.inf
    try:
        predicted = predict(prob.candidate(values), prob)
    except (InvalidParameterError, DivergenceError, SingularStepError) as exc:
        logger.debug("candidate %s rejected: %s", values, exc)
        return math.inf
    value = channel_misfit(prob.observed, predicted, prob.sigma_n)
    return value if math.isfinite(value) else math.inf


@dataclass(frozen=True)
class PairEstimate:
    estimates: Dict[str, float]
    misfit: float
    trace: Tuple[float, ...]
    result: OptimizerResult


def estimate_pair(
    prob: EstimationProblem,
    initial_guess: Mapping[str, float],
    budget: Optional[int] = None,
    *,
    max_iterations: int = 2000,
) -> PairEstimate:
    """Minimize the misfit over the two masked parameters.

    With ``budget`` the optimizer stops after that many iterations (heuristic
    stages); without it it runs to its tolerances (verification runs).
    """
    if len(prob.mask) != 2:
        raise ValueError(f"estimate_pair needs a two-parameter mask, got {prob.mask.free}")
    x0 = [float(initial_guess[name]) for name in prob.mask.free]

    def objective(x: np.ndarray) -> float:
        return misfit(x, prob)

    if budget is None:
        result = nelder_mead(objective, x0, max_iterations=max_iterations)
    else:
        result = nelder_mead_budgeted(objective, x0, budget)
    estimates = {name: float(v) for name, v in zip(prob.mask.free, result.best_point)}
    return PairEstimate(estimates=estimates, misfit=result.best_value, trace=result.history, result=result)


@dataclass(frozen=True)
class StageRecord:
    cycle: int
    stage: int
    pair: Tuple[str, str]
    entry_misfit: float
    misfit: float
    iterations: int
    evals: int
    termination: str
    start: Tuple[float, ...] = ()  # pair values the stage started from
    values: Tuple[float, ...] = ()  # pair values it committed


@dataclass
class EstimationState:
    current: RigParameters
    misfit: float
    stage: int = 0
    cycle: int = 0
    trace: List[StageRecord] = field(default_factory=list)
    initial_misfit: float = math.inf
    steady: bool = False

    def estimates(self, names: Sequence[str] = ESTIMABLE) -> Dict[str, float]:
        return {name: float(getattr(self.current, name)) for name in names}


def _is_steady(current: float, previous: float, steady_tol: float) -> bool:
    if math.isinf(steady_tol):
        return True
    if not (math.isfinite(current) and math.isfinite(previous)):
        return False
    return abs(current - previous) <= steady_tol * max(previous, 1e-30)


def estimate_ninefold(
    prob: EstimationProblem,
    initial_guesses: Mapping[str, float] = NINEFOLD_GUESSES,
    steady_tol: float = DEFAULT_STEADY_TOL,
    max_cycles: int = DEFAULT_MAX_CYCLES,
    *,
    budget: int = DEFAULT_BUDGET,
    schedule: PairSchedule = PairSchedule(),
    progress_callback: Optional[ProgressCallback] = None,
) -> EstimationState:
    """Pairwise block-cycling estimation of the masked parameters.

    Each stage frees one pair of the schedule, runs a budgeted Nelder-Mead from
    the current estimates and commits the result; the shared parameter thus
    carries its estimate into the next stage. After each full cycle the run
    stops once the misfit changed by at most ``steady_tol`` relative to the
    previous cycle, or after ``max_cycles`` cycles.
    """
    missing = [name for name in schedule.names if name not in prob.mask]
    if missing:
        raise ValueError(f"mask {prob.mask.free} does not free scheduled parameter(s) {missing}")
    if max_cycles < 1:
        raise ValueError(f"max_cycles must be >= 1, got {max_cycles}")
    guesses = {name: float(initial_guesses[name]) for name in prob.mask.free}
    bad = [name for name, v in guesses.items() if not (math.isfinite(v) and v > 0)]
    if bad:
        raise ValueError(f"initial guesses must be finite and positive: {bad}")

    def _log(message: str, *, ratio: Optional[float] = None) -> None:
        logger.debug(message)
        if progress_callback:
            payload: Dict[str, Any] = {"message": message}
            if ratio is not None:
                payload["ratio"] = max(0.0, min(1.0, ratio))
            try:
                progress_callback(payload)
            except Exception:
                pass

    current = prob.fixed.with_values(**guesses)
    start = misfit(current.values_of(prob.mask.free), prob.with_mask(prob.mask, current))
    state = EstimationState(current=current, misfit=start, initial_misfit=start)
    _log(f"initial misfit {start:.6g}", ratio=0.0)

    total_stages = max_cycles * len(schedule)
    previous = start
    for cycle in range(1, max_cycles + 1):
        for stage, pair in enumerate(schedule.pairs, start=1):
            stage_prob = prob.with_mask(ParameterMask(pair), fixed=state.current)
            x0 = state.current.values_of(pair)
            start_values = tuple(float(v) for v in x0)
            try:
                result = nelder_mead_budgeted(lambda x, p=stage_prob: misfit(x, p), x0, budget)
            except InvalidStartError:
                # keep the committed estimate, show the failure in the trace
                state.trace.append(
                    StageRecord(cycle, stage, pair, math.inf, math.inf, 0, 1, "invalid_start", start_values, start_values)
                )
                state.stage, state.cycle = stage, cycle
                _log(f"cycle {cycle} stage {stage} {pair}: misfit not finite at start, pair kept")
                continue

            state.current = stage_prob.candidate(result.best_point)
            state.misfit = result.best_value
            state.stage, state.cycle = stage, cycle
            state.trace.append(
                StageRecord(
                    cycle=cycle,
                    stage=stage,
                    pair=pair,
                    entry_misfit=result.start_value,
                    misfit=result.best_value,
                    iterations=result.iterations,
                    evals=result.evals,
                    termination=result.termination,
                    start=start_values,
                    values=tuple(float(v) for v in result.best_point),
                )
            )
            done = (cycle - 1) * len(schedule) + stage
            _log(f"cycle {cycle} stage {stage} {pair}: misfit {result.best_value:.6g}", ratio=done / total_stages)

        if _is_steady(state.misfit, previous, steady_tol):
            state.steady = True
            _log(f"steady state after cycle {cycle}: misfit {state.misfit:.6g}", ratio=1.0)
            break
        previous = state.misfit
    else:
        _log(f"no steady state within {max_cycles} cycles: misfit {state.misfit:.6g}", ratio=1.0)
    return state


@dataclass(frozen=True)
class DeviationRow:
    parameter: str
    initial_guess: float
    estimate: float
    reference: float
    relative_deviation_pct: float


def deviation_report(
    estimates: Mapping[str, float],
    reference: RigParameters,
    initial: Optional[Mapping[str, float]] = None,
) -> List[DeviationRow]:
    """Relative deviation |est - ref| / |ref| in percent, one row per estimated parameter."""
    names = [name for name in ESTIMABLE if name in estimates] + [n for n in estimates if n not in ESTIMABLE]
    rows: List[DeviationRow] = []
    for name in names:
        ref = float(getattr(reference, name))
        if ref == 0:
            raise ValueError(f"reference value of {name} is zero, relative deviation undefined")
        est = float(estimates[name])
        rows.append(
            DeviationRow(
                parameter=name,
                initial_guess=float(initial[name]) if initial and name in initial else math.nan,
                estimate=est,
                reference=ref,
                relative_deviation_pct=abs(est - ref) / abs(ref) * 100.0,
            )
        )
    return rows


def deviation_frame(rows: Sequence[DeviationRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.parameter, r.initial_guess, r.estimate, r.reference, r.relative_deviation_pct) for r in rows],
        columns=["parameter", "initial_guess", "estimate", "reference", "relative_deviation_pct"],
    )


def trace_frame(state: EstimationState) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.cycle, r.stage, "/".join(r.pair), r.misfit) for r in state.trace],
        columns=["cycle", "stage", "pair", "misfit"],
    )


def fit_overlay(data: MeasurementSet, params: RigParameters, solver: SolverConfig) -> pd.DataFrame:
    """Measured channels next to the channels simulated with ``params``."""
    traj = integrate_trapezoidal(assemble_system(params), solver)
    fitted = observe_at(traj, data.times)
    measured = data.channel_matrix()
    columns: Dict[str, np.ndarray] = {"t": data.times}
    for k, name in enumerate(CHANNELS):
        columns[name] = measured[:, k]
        columns[f"{name}_fit"] = fitted[:, k]
    return pd.DataFrame(columns)


def solver_from_times(times, tol: float = GRID_TOLERANCE) -> SolverConfig:
    """Solver grid for measurement times read from a file; the spacing must be uniform."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two samples to infer the time step")
    steps = np.diff(times)
    dt = float((times[-1] - times[0]) / (times.size - 1))
    uneven = np.flatnonzero(np.abs(steps - dt) > tol)
    if uneven.size:
        k = int(uneven[0])
        raise ValueError(f"non-uniform time grid: step {k + 1} is {steps[k]!r}, expected {dt!r}")
    solver = SolverConfig(dt=dt, t_end=float(times[-1]))
    # the simulation starts at t = 0, so the samples must sit on its grid
    grid_indices(times, 0.0, solver.dt, solver.n_steps + 1, tol=tol)
    return solver


@dataclass(frozen=True)
class VerificationRow:
    sigma_n: float
    seed: int
    estimates: Dict[str, float]
    deviations: Dict[str, float]
    misfit: float
    iterations: int
    evals: int
    termination: str


def verification_run(
    truth: RigParameters,
    solver: SolverConfig,
    sigma_n: float,
    seed: int,
    *,
    mask: Sequence[str] = ("cm", "ke"),
    guesses: Mapping[str, float] = VERIFICATION_GUESSES,
    max_iterations: int = 2000,
) -> VerificationRow:
    """One row of the two-parameter verification: synthesize at ``truth``, estimate the pair back."""
    data = synthesize(truth, solver, sigma_n, seed)
    # the scale cannot move the argmin; a noise-free row still needs a positive one
    scale = sigma_n if sigma_n > 0 else 1.0
    prob = EstimationProblem(data=data, fixed=truth, mask=ParameterMask(tuple(mask)), solver=solver, sigma_n=scale)
    pair = estimate_pair(prob, guesses, max_iterations=max_iterations)
    rows = deviation_report(pair.estimates, truth)
    return VerificationRow(
        sigma_n=float(sigma_n),
        seed=int(seed),
        estimates=pair.estimates,
        deviations={r.parameter: r.relative_deviation_pct for r in rows},
        misfit=pair.misfit,
        iterations=pair.result.iterations,
        evals=pair.result.evals,
        termination=pair.result.termination,
    )


def verification_sweep(
    truth: RigParameters,
    solver: SolverConfig,
    sigmas: Sequence[float] = VERIFICATION_SIGMAS,
    seed: int = 0,
    *,
    mask: Sequence[str] = ("cm", "ke"),
    guesses: Mapping[str, float] = VERIFICATION_GUESSES,
    max_iterations: int = 2000,
    workers: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[VerificationRow]:
    """Verification rows for each noise level; row k uses seed + k."""
    if len(mask) != 2:
        raise ValueError(f"verification estimates a pair, got mask {tuple(mask)}")

    def _run(k: int) -> VerificationRow:
        row = verification_run(
            truth, solver, sigmas[k], seed + k, mask=mask, guesses=guesses, max_iterations=max_iterations
        )
        if progress_callback:
            try:
                progress_callback({"message": f"sigma_n={sigmas[k]:g} done ({row.termination})", "ratio": (k + 1) / len(sigmas)})
            except Exception:
                pass
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run, range(len(sigmas))))
    return [_run(k) for k in range(len(sigmas))]


def verification_frame(rows: Sequence[VerificationRow], mask: Sequence[str] = ("cm", "ke")) -> pd.DataFrame:
    records = []
    for row in rows:
        record: Dict[str, Any] = {"sigma_n": row.sigma_n, "seed": row.seed}
        for name in mask:
            record[f"{name}_estimate"] = row.estimates[name]
            record[f"{name}_relative_deviation_pct"] = row.deviations[name]
        record.update(misfit=row.misfit, iterations=row.iterations, evals=row.evals, termination=row.termination)
        records.append(record)
    return pd.DataFrame.from_records(records)
