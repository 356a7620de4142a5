from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from ruamel.yaml import YAML
from ruamel.yaml.error import MarkedYAMLError

from smbsim.app.services.errors import ConfigError
from smbsim.app.services.solver import SolverConfig


logger = logging.getLogger(__name__)

ModelPresetName = Literal[
    "stefan",
    "burgers",
    "reaction",
    "affine_bounded",
    "superlinear",
    "constant_sigma",
    "order_book",
    "custom",
]

# Left out of the hash so that output location and worker count never
# change the metadata bytes.
HASH_EXCLUDE = {"output": True, "ensemble": {"workers"}}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    preset: ModelPresetName = "stefan"
    params: dict[str, float] = Field(default_factory=dict)
    expressions: dict[str, str] = Field(default_factory=dict)
    eta_plus: float = Field(default=1.0, gt=0.0)
    eta_minus: float = Field(default=1.0, gt=0.0)
    c: float = Field(default=1.0, ge=0.0)


class KernelSection(_Section):
    preset: Literal["gaussian", "indicator"] = "gaussian"
    width: float = Field(default=0.5, gt=0.0)
    a: float = 0.0
    b: float = 1.0
    m_y: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_interval(self) -> KernelSection:
        if self.preset == "indicator" and not self.b > self.a:
            raise ValueError(f"indicator kernel needs b > a, got a={self.a}, b={self.b}")

        return self


class GridSection(_Section):
    n: int = Field(default=200, ge=2)
    L: float = Field(default=8.0, gt=0.0)


class InitialSection(_Section):
    profile: Literal["similarity", "bump", "sine", "zero"] = "bump"
    amplitude: float = 1.0
    amplitude_minus: float = 0.0
    xstar: float = 0.0
    t0: float = Field(default=0.1, gt=0.0)


class SolverSection(_Section):
    dt: float = Field(default=1e-3, gt=0.0)
    t_end: float = Field(default=1.0, gt=0.0)
    truncation_N: float | None = Field(default=None, ge=0.0)
    blowup_threshold: float = Field(default=1e6, gt=0.0)
    boundary_threshold: float = Field(default=1e3, gt=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    scheme: Literal["exponential_euler", "semi_implicit_euler"] = "exponential_euler"
    record_every: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_horizon(self) -> SolverSection:
        if self.dt > self.t_end:
            raise ValueError(f"dt={self.dt} exceeds t_end={self.t_end}")

        return self

    def to_solver_config(self, record_noise: bool = False) -> SolverConfig:
        return SolverConfig(
            dt=self.dt,
            t_end=self.t_end,
            truncation_N=self.truncation_N,
            blowup_threshold=self.blowup_threshold,
            boundary_threshold=self.boundary_threshold,
            seed=self.seed,
            scheme=self.scheme,
            record_every=self.record_every,
            record_noise=record_noise,
        )


class OutputSection(_Section):
    directory: str = "output"
    format: Literal["csv", "json"] = "csv"
    profile_stride: int = Field(default=0, ge=0)
    fail_on_blowup: bool = False


class EnsembleSection(_Section):
    n_paths: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)


class BenchmarkSection(_Section):
    # Adds the acceptance-scale Stefan run to the quick suite.
    full: bool = False


class RunConfig(_Section):
    mode: Literal["single", "ensemble", "validate", "benchmark"] = "single"
    model: ModelSection = Field(default_factory=ModelSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    grid: GridSection = Field(default_factory=GridSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    output: OutputSection = Field(default_factory=OutputSection)
    ensemble: EnsembleSection = Field(default_factory=EnsembleSection)
    benchmark: BenchmarkSection = Field(default_factory=BenchmarkSection)


def _format_validation_error(exc: ValidationError) -> str:
    lines = []

    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{location}: {error['msg']}")

    return "; ".join(lines)


def validate_config(data: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc


def load_config(path: Path | str) -> RunConfig:
    """
    Read a YAML run config. Unknown keys are errors.

    Parse errors report line and column; validation errors report the
    dotted field path.
    """
    config_path = Path(path)

    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")

    yaml = YAML(typ="safe")

    try:
        with config_path.open("r", encoding="utf-8") as handle:
            data = yaml.load(handle)
    except MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark

        if mark is None:
            raise ConfigError(f"{config_path}: {exc.problem or exc}") from exc

        raise ConfigError(
            f"{config_path}: line {mark.line + 1}, column {mark.column + 1}: {exc.problem or exc}"
        ) from exc

    if data is None:
        data = {}

    if not isinstance(data, dict):
        raise ConfigError(f"{config_path}: the top level must be a mapping, got {type(data).__name__}.")

    config = validate_config(data)
    logger.info("Loaded config %s (mode %s).", config_path, config.mode)
    return config


def config_document(cfg: RunConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json")


def emit_config(cfg: RunConfig, path: Path | str) -> Path:
    """
    Write the fully defaulted config. load_config(path) gives back cfg.
    """
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    yaml = YAML(typ="safe")
    yaml.default_flow_style = False

    with output_path.open("w", encoding="utf-8") as handle:
        yaml.dump(config_document(cfg), handle)

    return output_path


def canonical_json(cfg: RunConfig) -> str:
    document = cfg.model_dump(mode="json", exclude=HASH_EXCLUDE)
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def apply_overrides(
    cfg: RunConfig,
    seed: int | None = None,
    out: str | None = None,
    paths: int | None = None,
    workers: int | None = None,
) -> RunConfig:
    """
    Apply command-line overrides and validate the result again.
    """
    data = config_document(cfg)

    if seed is not None:
        data["solver"]["seed"] = seed

    if out is not None:
        data["output"]["directory"] = out

    if paths is not None:
        data["ensemble"]["n_paths"] = paths

    if workers is not None:
        data["ensemble"]["workers"] = workers

    return validate_config(data)
