from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .estimator import NINEFOLD_GUESSES, VERIFICATION_GUESSES, VERIFICATION_SIGMAS
from .kvfile import KeyValueSyntaxError, format_key_values, parse_key_values
from .models import ESTIMABLE, ParameterMask, RigParameters, SolverConfig
from .rig_model import ParameterFileError, load_parameters

OUT_ENV = "RIG_IDENT_OUT"
DEFAULT_OUT = "output"
_SEED_LIMIT = 2 ** 64


class ConfigError(ValueError):
    pass


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def _check_guesses(guesses: Dict[str, float], defaults: Dict[str, float]) -> Dict[str, float]:
    unknown = sorted(set(guesses) - set(ESTIMABLE))
    if unknown:
        raise ValueError(f"no estimable parameter named {', '.join(unknown)}")
    merged = {**defaults, **guesses}
    bad = [name for name, v in merged.items() if not v > 0]
    if bad:
        raise ValueError(f"initial guesses must be > 0: {', '.join(bad)}")
    return merged


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParametersSection(_Section):
    file: Optional[str] = None


class SolverSection(_Section):
    dt: float = 1e-3
    t_end: float = 10.0

    @model_validator(mode="after")
    def check_grid(self) -> "SolverSection":
        self.build()
        return self

    def build(self) -> SolverConfig:
        return SolverConfig(dt=self.dt, t_end=self.t_end)


class NoiseSection(_Section):
    sigma_n: float = Field(default=0.01, ge=0)
    seed: int = Field(default=0, ge=0, lt=_SEED_LIMIT)


class VerifySection(_Section):
    sigmas: List[float] = Field(default_factory=lambda: list(VERIFICATION_SIGMAS))
    mask: List[str] = Field(default_factory=lambda: ["cm", "ke"])
    guess: Dict[str, float] = Field(default_factory=lambda: dict(VERIFICATION_GUESSES))
    max_iterations: int = Field(default=2000, ge=1)
    workers: int = Field(default=1, ge=1)

    @field_validator("sigmas", "mask", mode="before")
    @classmethod
    def split_lists(cls, v: Any) -> Any:
        return _split_list(v)

    @field_validator("sigmas")
    @classmethod
    def check_sigmas(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one noise level is needed")
        if any(not s >= 0 for s in v):
            raise ValueError("noise levels must be >= 0")
        return v

    @field_validator("guess")
    @classmethod
    def check_guess(cls, v: Dict[str, float]) -> Dict[str, float]:
        return _check_guesses(v, VERIFICATION_GUESSES)

    @model_validator(mode="after")
    def check_pair(self) -> "VerifySection":
        ParameterMask(tuple(self.mask))
        if len(self.mask) != 2:
            raise ValueError(f"verify.mask must name two parameters, got {self.mask}")
        missing = [name for name in self.mask if name not in self.guess]
        if missing:
            raise ValueError(f"no verify.guess for {', '.join(missing)}")
        return self


class EstimationSection(_Section):
    guess: Dict[str, float] = Field(default_factory=lambda: dict(NINEFOLD_GUESSES))
    budget: int = Field(default=10, ge=1)
    steady_tol: float = Field(default=1e-6, ge=0)
    max_cycles: int = Field(default=100, ge=1)
    sigma_n: float = Field(default=1.0, gt=0)
    reference: Literal["nominal", "truth"] = "nominal"

    @field_validator("guess")
    @classmethod
    def check_guess(cls, v: Dict[str, float]) -> Dict[str, float]:
        return _check_guesses(v, NINEFOLD_GUESSES)


class PathsSection(_Section):
    out: Optional[str] = None
    data: Optional[str] = None
    synthetic_truth: Optional[str] = None


class ReportSection(_Section):
    excel: bool = False


class RunConfig(_Section):
    parameters: ParametersSection = Field(default_factory=ParametersSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    verify: VerifySection = Field(default_factory=VerifySection)
    estimation: EstimationSection = Field(default_factory=EstimationSection)
    paths: PathsSection = Field(default_factory=PathsSection)
    report: ReportSection = Field(default_factory=ReportSection)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with dotted keys replaced, e.g. ``{"noise.seed": 3}``; ``None`` values are ignored."""
        data = self.model_dump()
        for key, value in overrides.items():
            if value is not None:
                _assign(data, key, value, source="<command line>", line_no=0)
        return _validate(data, "<command line>")


def _assign(tree: Dict[str, Any], key: str, value: Any, *, source: str, line_no: int) -> None:
    parts = key.split(".")
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{source}:{line_no}: {key!r} nests under the value key {part!r}")
        node = child
    if isinstance(node.get(parts[-1]), dict) and not isinstance(value, dict):
        raise ConfigError(f"{source}:{line_no}: {key!r} is a section, not a value")
    node[parts[-1]] = value


def _validate(tree: Dict[str, Any], source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"{source}: {problems}") from exc


def parse_config(text: str, source: str = "<text>") -> RunConfig:
    try:
        entries = parse_key_values(text, source)
    except KeyValueSyntaxError as exc:
        raise ConfigError(str(exc)) from exc
    tree: Dict[str, Any] = {}
    for line_no, key, raw in entries:
        # empty value keeps the default
        if raw == "":
            continue
        _assign(tree, key, raw, source=source, line_no=line_no)
    return _validate(tree, source)


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text, str(path))


def _flatten(prefix: str, value: Any, out: List[Tuple[str, str]]) -> None:
    if isinstance(value, dict):
        for key, item in value.items():
            _flatten(f"{prefix}.{key}" if prefix else key, item, out)
    elif isinstance(value, list):
        out.append((prefix, ", ".join(_render(v) for v in value)))
    else:
        out.append((prefix, _render(value)))


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def defaults_text(config: Optional[RunConfig] = None) -> str:
    """All keys with their values as a config document; parses back to the same config."""
    items: List[Tuple[str, str]] = []
    _flatten("", (config or RunConfig()).model_dump(), items)
    return "# rig-ident configuration\n" + format_key_values(items)


def rig_parameters(config: RunConfig, base_dir: Optional[Path] = None) -> RigParameters:
    """Parameter set named by ``parameters.file``, or the nominal one."""
    if not config.parameters.file:
        return RigParameters.nominal()
    try:
        return load_parameters(_resolve(config.parameters.file, base_dir))
    except ParameterFileError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve(path: str, base_dir: Optional[Path]) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def resolve_output_dir(config: RunConfig, flag: Optional[str] = None) -> Path:
    """``--out`` flag, then ``paths.out``, then $RIG_IDENT_OUT (a .env file may set it), then ``output``."""
    if flag:
        return Path(flag)
    if config.paths.out:
        return Path(config.paths.out)
    load_dotenv(find_dotenv(usecwd=True), override=False)
    env = os.getenv(OUT_ENV)
    return Path(env) if env else Path(DEFAULT_OUT)


def prepare_output_dir(out: Path) -> Path:
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path is not a directory: {out}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory is not writable: {out}")
    return out
