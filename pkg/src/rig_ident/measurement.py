from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .models import CHANNEL_COLUMNS, CHANNELS, MeasurementSet, RigParameters, SolverConfig, Trajectory
from .rig_model import assemble_system
from .simulate import integrate_trapezoidal

logger = logging.getLogger(__name__)

COLUMNS = ("t",) + CHANNELS
GRID_TOLERANCE = 1e-9
_SEED_LIMIT = 2 ** 64


class MeasurementFormatError(ValueError):
    def __init__(self, message: str, *, row: Optional[int] = None, column: Optional[str] = None) -> None:
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


def observe(traj: Trajectory) -> MeasurementSet:
    """Noise-free observable channels of a trajectory; q and dq are dropped."""
    return MeasurementSet.from_matrix(traj.times, traj.states[:, CHANNEL_COLUMNS], sigma_n=0.0)


def grid_indices(times, t0: float, dt: float, n: int, tol: float = GRID_TOLERANCE) -> np.ndarray:
    """Indices of ``times`` on the grid t0 + k dt, k < n; raises if any time is off-grid."""
    times = np.asarray(times, dtype=float)
    idx = np.rint((times - t0) / dt).astype(np.int64)
    off = np.abs(t0 + idx * dt - times) > tol
    outside = (idx < 0) | (idx >= n)
    bad = np.flatnonzero(off | outside)
    if bad.size:
        k = int(bad[0])
        raise ValueError(f"time {times[k]!r} (sample {k}) is not on the solver grid t0={t0}, dt={dt}, {n} points")
    return idx


def observe_at(traj: Trajectory, times) -> np.ndarray:
    """Observable channels at the given grid times, as an (n, 4) array."""
    idx = grid_indices(times, traj.t0, traj.dt, len(traj))
    return traj.states[np.ix_(idx, CHANNEL_COLUMNS)]


def add_noise(
    m: MeasurementSet,
    sigma_n: float,
    seed: int,
    *,
    channels: Optional[Sequence[str]] = None,
) -> MeasurementSet:
    """Add i.i.d. Normal(0, sigma_n^2) noise to every sample of the chosen channels.

    Draws come from numpy's PCG64 bit generator seeded with ``seed``, as one
    (n, 4) standard-normal block in CHANNELS column order. The block is drawn
    in full whatever ``channels`` selects (default: all four), so a channel
    gets the same noise whether or not the others are perturbed.
    """
    if not sigma_n >= 0:
        raise ValueError(f"sigma_n must be >= 0, got {sigma_n}")
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    selected = CHANNELS if channels is None else tuple(channels)
    unknown = [name for name in selected if name not in CHANNELS]
    if unknown:
        raise ValueError(f"unknown channel(s) {unknown}, expected a subset of {CHANNELS}")

    clean = m.channel_matrix()
    noisy = clean.copy()
    if sigma_n > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        draws = sigma_n * rng.standard_normal(clean.shape)
        for k, name in enumerate(CHANNELS):
            if name in selected:
                noisy[:, k] = clean[:, k] + draws[:, k]
    return MeasurementSet.from_matrix(m.times, noisy, sigma_n=float(sigma_n), seed=seed)


def measurement_frame(m: MeasurementSet) -> pd.DataFrame:
    frame = pd.DataFrame(m.channel_matrix(), columns=list(CHANNELS))
    frame.insert(0, "t", m.times)
    return frame


def save_measurements(m: MeasurementSet, path: Union[str, Path]) -> None:
    buf = io.StringIO()
    buf.write(f"# sigma_n={m.sigma_n!r}\n")
    if m.seed is not None:
        buf.write(f"# seed={m.seed}\n")
    measurement_frame(m).to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _provenance(text: str) -> Dict[str, Tuple[int, str]]:
    """``# key=value`` comment entries, each with the number of its line."""
    found: Dict[str, Tuple[int, str]] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line.startswith("#"):
            continue
        for part in line[1:].split(","):
            if "=" in part:
                key, value = part.split("=", 1)
                found[key.strip()] = (number, value.strip())
    return found


def _meta_value(path: Path, meta: Dict[str, Tuple[int, str]], key: str, cast):
    number, value = meta[key]
    try:
        return cast(value)
    except ValueError as exc:
        raise MeasurementFormatError(f"{path}: line {number}: bad {key} value {value!r}") from exc


def load_measurements(path: Union[str, Path]) -> MeasurementSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"measurement file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise MeasurementFormatError(f"{path}: no samples")

    try:
        raw = pd.read_csv(io.StringIO(text), comment="#", skipinitialspace=True, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise MeasurementFormatError(f"{path}: no samples") from exc
    raw.columns = [str(c).strip() for c in raw.columns]

    for column in COLUMNS:
        if column not in raw.columns:
            raise MeasurementFormatError(f"{path}: missing column", column=column)
    extra = [c for c in raw.columns if c not in COLUMNS]
    if extra:
        logger.debug("%s: ignoring column(s) %s", path, ", ".join(extra))
    if raw.empty:
        raise MeasurementFormatError(f"{path}: no samples")

    values: Dict[str, np.ndarray] = {}
    for column in COLUMNS:
        # numeric columns arrive parsed; anything else is coerced only to locate the bad cell
        parsed = pd.to_numeric(raw[column], errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            k = int(bad[0])
            raise MeasurementFormatError(f"{path}: non-numeric value {raw[column].iloc[k]!r}", row=k + 1, column=column)
        values[column] = parsed

    steps = np.diff(values["t"])
    back = np.flatnonzero(steps <= 0)
    if back.size:
        raise MeasurementFormatError(f"{path}: non-monotonic time", row=int(back[0]) + 2, column="t")

    meta = _provenance(text)
    sigma_n = _meta_value(path, meta, "sigma_n", float) if "sigma_n" in meta else 0.0
    seed = _meta_value(path, meta, "seed", int) if "seed" in meta else None
    return MeasurementSet(values["t"], *(values[c] for c in CHANNELS), sigma_n=sigma_n, seed=seed)


def synthesize(truth: RigParameters, solver: SolverConfig, sigma_n: float, seed: int) -> MeasurementSet:
    """Simulate ``truth`` on the solver grid, observe, and add noise."""
    traj = integrate_trapezoidal(assemble_system(truth), solver)
    return add_noise(observe(traj), sigma_n, seed)
