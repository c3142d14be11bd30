from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from .estimator import (
    EstimationProblem,
    deviation_frame,
    deviation_report,
    estimate_ninefold,
    fit_overlay,
    solver_from_times,
    trace_frame,
    verification_frame,
    verification_sweep,
)
from .measurement import load_measurements, save_measurements, synthesize
from .models import ESTIMABLE, STATE_NAMES, ParameterMask
from .options import (
    ConfigError,
    RunConfig,
    defaults_text,
    load_config,
    prepare_output_dir,
    resolve_output_dir,
    rig_parameters,
)
from .report import render_deviation_table, render_verification_table, write_excel
from .rig_model import ParameterFileError, assemble_system, load_parameters, save_parameters
from .simulate import integrate_trapezoidal, save_trajectory

logger = logging.getLogger(__name__)

Writer = Callable[[Path], None]


def _frame_writer(frame: pd.DataFrame) -> Writer:
    return lambda path: frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _text_writer(text: str) -> Writer:
    return lambda path: path.write_text(text, encoding="utf-8")


def _write_outputs(out: Path, outputs: Dict[str, Writer]) -> List[Path]:
    written = []
    for name, write in outputs.items():
        path = out / name
        write(path)
        logger.info("wrote %s", path)
        written.append(path)
    return written


def _progress(payload: dict) -> None:
    logger.info(payload.get("message", ""))


def cmd_simulate(config: RunConfig, out: Path) -> List[Path]:
    params = rig_parameters(config)
    solver = config.solver.build()
    traj = integrate_trapezoidal(assemble_system(params), solver)

    summary = ", ".join(f"{name}={value:.6g}" for name, value in zip(STATE_NAMES, traj.final.as_array()))
    print(f"final state at t={traj.times[-1]:g}: {summary}")
    return _write_outputs(out, {"trajectory.csv": lambda path: save_trajectory(traj, path)})


def cmd_generate(config: RunConfig, out: Path) -> List[Path]:
    params = rig_parameters(config)
    data = synthesize(params, config.solver.build(), config.noise.sigma_n, config.noise.seed)
    print(f"{len(data.times)} samples, sigma_n={data.sigma_n:g}, seed={data.seed}")
    return _write_outputs(out, {"measurements.csv": lambda path: save_measurements(data, path)})


def cmd_verify2(config: RunConfig, out: Path) -> List[Path]:
    truth = rig_parameters(config)
    v = config.verify
    rows = verification_sweep(
        truth,
        config.solver.build(),
        v.sigmas,
        config.noise.seed,
        mask=v.mask,
        guesses=v.guess,
        max_iterations=v.max_iterations,
        workers=v.workers,
        progress_callback=_progress,
    )
    frame = verification_frame(rows, v.mask)
    for row in rows:
        deviations = ", ".join(f"{name} {row.deviations[name]:.4g}%" for name in v.mask)
        print(f"sigma_n={row.sigma_n:g}: {deviations} ({row.termination})")

    outputs: Dict[str, Writer] = {
        "verify2.csv": _frame_writer(frame),
        "verify2.md": _text_writer(render_verification_table(rows, v.mask)),
    }
    if config.report.excel:
        outputs["verify2.xlsx"] = lambda path: write_excel({"verification": frame}, path)
    return _write_outputs(out, outputs)


def _estimation_inputs(config: RunConfig):
    """Measurements, solver grid, fixed parameters and reference, validated before any estimation."""
    base = rig_parameters(config)
    if config.paths.data:
        if config.estimation.reference == "truth":
            raise ConfigError("estimation.reference = truth needs synthetic mode (--synthetic-truth)")
        data = load_measurements(config.paths.data)
        try:
            solver = solver_from_times(data.times)
        except ValueError as exc:
            raise ConfigError(f"{config.paths.data}: {exc}") from exc
        return data, solver, base, base

    if config.paths.synthetic_truth:
        try:
            truth = load_parameters(config.paths.synthetic_truth, base=base)
        except ParameterFileError as exc:
            raise ConfigError(str(exc)) from exc
        solver = config.solver.build()
        data = synthesize(truth, solver, config.noise.sigma_n, config.noise.seed)
        reference = truth if config.estimation.reference == "truth" else base
        return data, solver, truth, reference

    raise ConfigError("estimate9 needs a measurement file (--data) or a ground-truth parameter file (--synthetic-truth)")


def cmd_estimate9(config: RunConfig, out: Path) -> List[Path]:
    data, solver, fixed, reference = _estimation_inputs(config)
    e = config.estimation
    prob = EstimationProblem(data=data, fixed=fixed, mask=ParameterMask(ESTIMABLE), solver=solver, sigma_n=e.sigma_n)
    state = estimate_ninefold(
        prob,
        e.guess,
        e.steady_tol,
        e.max_cycles,
        budget=e.budget,
        progress_callback=_progress,
    )
    rows = deviation_report(state.estimates(), reference, initial=e.guess)
    report = deviation_frame(rows)
    trace = trace_frame(state)
    overlay = fit_overlay(data, state.current, solver)

    summary = {
        "initial misfit": state.initial_misfit,
        "final misfit": state.misfit,
        "cycles": state.cycle,
        "steady state": "yes" if state.steady else "no",
        "reference": e.reference,
    }
    print(f"misfit {state.initial_misfit:.6g} -> {state.misfit:.6g} after {state.cycle} cycle(s)")

    outputs: Dict[str, Writer] = {
        "estimate9_report.csv": _frame_writer(report),
        "estimate9_trace.csv": _frame_writer(trace),
        "estimate9_fit.csv": _frame_writer(overlay),
        "estimate9_report.md": _text_writer(render_deviation_table(rows, summary=summary)),
        "estimate9_parameters.txt": lambda path: save_parameters(state.current, path),
    }
    if config.report.excel:
        outputs["estimate9_report.xlsx"] = lambda path: write_excel({"report": report, "trace": trace}, path)
    return _write_outputs(out, outputs)


COMMANDS: Dict[str, Callable[[RunConfig, Path], List[Path]]] = {
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "verify2": cmd_verify2,
    "estimate9": cmd_estimate9,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (see the defaults command)")
    common.add_argument("--out", help="output directory (default: paths.out, $RIG_IDENT_OUT, then ./output)")
    common.add_argument("--seed", type=int, default=None, help="noise seed, overrides noise.seed")
    common.add_argument("--sigma", type=float, default=None, help="noise level, overrides noise.sigma_n")
    common.add_argument("--data", default=None, help="measurement CSV, overrides paths.data")
    common.add_argument("--synthetic-truth", default=None, help="ground-truth parameter file, overrides paths.synthetic_truth")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="rig-ident", description="Drillstring test-rig simulation and parameter identification")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate the rig model and write trajectory.csv")
    sub.add_parser("generate", parents=[common], help="write noisy synthetic measurements.csv")
    sub.add_parser("verify2", parents=[common], help="two-parameter estimation for several noise levels")
    sub.add_parser("estimate9", parents=[common], help="nine-parameter pairwise estimation")
    sub.add_parser("defaults", parents=[common], help="print every config key with its default")
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(format="%(name)s: %(levelname)s: %(message)s", level=level)
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = load_config(args.config).with_overrides(
            {
                "noise.seed": args.seed,
                "noise.sigma_n": args.sigma,
                "paths.data": args.data,
                "paths.synthetic_truth": args.synthetic_truth,
            }
        )
        if args.command == "defaults":
            sys.stdout.write(defaults_text(config))
            return 0
        # referenced files are checked before anything is computed
        rig_parameters(config)
        out = prepare_output_dir(resolve_output_dir(config, args.out))
        COMMANDS[args.command](config, out)
    except Exception as exc:
        logger.error("failed: %s", exc)
        logger.debug("traceback", exc_info=True)
        return 1
    return 0
