from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

import smbsim
from smbsim.app.services.benchmarks import BenchmarkResult, print_benchmark_results, run_benchmarks
from smbsim.app.services.coefficients import (
    ModelCoefficients,
    ValidationReport,
    print_validation_report,
    validate_assumptions,
)
from smbsim.app.services.errors import ConfigError, ExpressionError, RootNotFoundError
from smbsim.app.services.frame_transform import reconstruct_moving_frame
from smbsim.app.services.grid_core import Grid1D, SystemState
from smbsim.app.services.noise import KernelReport, NoiseKernel, check_kernel, hs_sample_points
from smbsim.app.services.presets import MODEL_PRESETS, build_kernel, build_model, initial_state
from smbsim.app.services.run_config import RunConfig, canonical_json, config_hash
from smbsim.app.services.run_registry import record_run
from smbsim.app.services.solver import EnsembleStats, FixedFrameTrajectory, run_ensemble, run_trajectory
from smbsim.app.services.validation import StefanSimilarity, stefan_front


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_INTERNAL = 3

TRAJECTORY_COLUMNS = ["time", "xstar", "g1", "g2", "l2_norm", "graph_norm"]
REFERENCE_COLUMNS = ["xstar_reference", "relative_error"]
ENSEMBLE_COLUMNS = ["time", "front_mean", "front_var", "alive", "g1_mean", "g2_mean"]
BENCHMARK_COLUMNS = ["name", "value", "threshold", "passed"]


@dataclass(frozen=True, eq=False)
class Scenario:
    config: RunConfig
    grid: Grid1D
    model: ModelCoefficients
    kernel: NoiseKernel
    initial: SystemState
    similarity: StefanSimilarity | None = None


@dataclass(frozen=True)
class RunOutcome:
    mode: str
    exit_code: int
    status: str
    artifacts: list[Path] = field(default_factory=list)
    wall_time_s: float = 0.0
    summary: dict[str, Any] = field(default_factory=dict)


def _front_coefficient(cfg: RunConfig) -> float:
    preset = MODEL_PRESETS[cfg.model.preset]
    return float(cfg.model.params.get("varrho", preset.defaults.get("varrho", 1.0)))


def build_scenario(cfg: RunConfig, enforce_assumptions: bool = True) -> Scenario:
    """
    Grid, coefficients, kernel and initial state for a run config.

    Preset and parameter errors surface as ConfigError.
    """
    try:
        grid = Grid1D.from_length(cfg.grid.n, cfg.grid.L)
        model = build_model(
            cfg.model.preset,
            cfg.model.params,
            cfg.model.expressions,
            eta_plus=cfg.model.eta_plus,
            eta_minus=cfg.model.eta_minus,
            c=cfg.model.c,
            enforce_assumptions=enforce_assumptions,
        )

        similarity = None
        if cfg.initial.profile == "similarity":
            similarity = StefanSimilarity.build(
                eta=cfg.model.eta_plus,
                varrho=_front_coefficient(cfg),
                amplitude=cfg.initial.amplitude,
                t0=cfg.initial.t0,
                x0=cfg.initial.xstar,
            )

        s0 = initial_state(
            cfg.initial.profile,
            grid,
            amplitude=cfg.initial.amplitude,
            amplitude_minus=cfg.initial.amplitude_minus,
            xstar=cfg.initial.xstar,
            similarity=similarity,
        )
        kernel = build_kernel(
            cfg.kernel.preset,
            grid,
            s0.xstar,
            width=cfg.kernel.width,
            a=cfg.kernel.a,
            b=cfg.kernel.b,
            m_y=cfg.kernel.m_y,
        )
    except (ExpressionError, RootNotFoundError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return Scenario(
        config=cfg,
        grid=grid,
        model=model,
        kernel=kernel,
        initial=s0,
        similarity=similarity,
    )


# Writers.


def _format(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"

    if isinstance(value, (int, np.integer)):
        return str(int(value))

    if isinstance(value, (float, np.floating)):
        return repr(float(value))

    return str(value)


def metadata_header(cfg: RunConfig, status: str) -> dict[str, str]:
    grid = Grid1D.from_length(cfg.grid.n, cfg.grid.L)
    return {
        "config_sha256": config_hash(cfg),
        "seed": str(cfg.solver.seed),
        "grid": f"n={cfg.grid.n} L={_format(cfg.grid.L)} h={_format(grid.h)}",
        "dt": _format(cfg.solver.dt),
        "scheme": cfg.solver.scheme,
        "version": smbsim.__version__,
        "mode": cfg.mode,
        "status": status,
        "config": canonical_json(cfg),
    }


def write_table(
    path: Path,
    fmt: str,
    metadata: dict[str, str],
    wall_time_s: float,
    columns: Sequence[str],
    rows: Sequence[Sequence[Any]],
) -> Path:
    """
    One table with its metadata. CSV keeps the metadata in '# key: value'
    lines; wall time is the last of them.
    """
    path = path.with_suffix(f".{fmt}")
    path.parent.mkdir(parents=True, exist_ok=True)

    if fmt == "json":
        document = {
            "metadata": metadata,
            "wall_time_s": wall_time_s,
            "columns": list(columns),
            "rows": [[_json_value(value) for value in row] for row in rows],
        }
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        return path

    with path.open("w", encoding="utf-8", newline="") as handle:
        for key, value in metadata.items():
            handle.write(f"# {key}: {value}\n")

        handle.write(f"# wall_time_s: {wall_time_s:.3f}\n")

        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)

        for row in rows:
            writer.writerow([_format(value) for value in row])

    return path


def _json_value(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)

    if isinstance(value, (int, np.integer)):
        return int(value)

    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else repr(value)

    return value


def trajectory_rows(trajectory: FixedFrameTrajectory, similarity: StefanSimilarity | None) -> tuple[list[str], list[list[Any]]]:
    columns = list(TRAJECTORY_COLUMNS)

    if similarity is not None:
        columns += REFERENCE_COLUMNS

    rows = []

    for index, t in enumerate(trajectory.times):
        row: list[Any] = [
            float(t),
            float(trajectory.fronts[index]),
            float(trajectory.traces[index, 0]),
            float(trajectory.traces[index, 1]),
            float(trajectory.l2_norms[index]),
            float(trajectory.graph_norms[index]),
        ]

        if similarity is not None:
            reference = float(stefan_front(similarity, t))
            row += [reference, abs(row[1] - reference) / abs(reference)]

        rows.append(row)

    return columns, rows


def ensemble_rows(stats: EnsembleStats) -> list[list[Any]]:
    return [
        [
            float(stats.times[index]),
            float(stats.front_mean[index]),
            float(stats.front_var[index]),
            int(stats.alive[index]),
            float(stats.g1_mean[index]),
            float(stats.g2_mean[index]),
        ]
        for index in range(stats.times.size)
    ]


def _profile_tables(
    trajectory: FixedFrameTrajectory,
    stride: int,
) -> tuple[tuple[list[str], list[list[Any]]], tuple[list[str], list[list[Any]]]]:
    picked = list(range(0, len(trajectory.states), stride))
    grid = trajectory.grid

    fixed_columns = ["time", "xstar"]
    fixed_columns += [f"u1_{j}" for j in range(1, grid.n + 1)]
    fixed_columns += [f"u2_{j}" for j in range(1, grid.n + 1)]

    fixed_rows = []
    for index in picked:
        state = trajectory.states[index]
        fixed_rows.append(
            [float(trajectory.times[index]), state.xstar, *state.u1.values.tolist(), *state.u2.values.tolist()]
        )

    moving = reconstruct_moving_frame(trajectory)
    moving_columns = ["time", "xstar"] + [f"v_{_format(float(x))}" for x in moving.grid.nodes]
    moving_rows = [
        [float(moving.times[index]), float(moving.fronts[index]), *moving.profiles[index].values.tolist()]
        for index in picked
    ]

    return (fixed_columns, fixed_rows), (moving_columns, moving_rows)


# Modes.


def _run_single(scenario: Scenario, directory: Path) -> tuple[str, int, dict[str, Any], list[tuple[Path, list[str], list[list[Any]]]]]:
    cfg = scenario.config
    trajectory = run_trajectory(cfg.solver.to_solver_config(), scenario.model, scenario.kernel, scenario.initial)
    status = trajectory.status

    columns, rows = trajectory_rows(trajectory, scenario.similarity)
    tables = [(directory / "trajectory", columns, rows)]

    if cfg.output.profile_stride > 0 and trajectory.states:
        (fixed_columns, fixed_rows), (moving_columns, moving_rows) = _profile_tables(
            trajectory, cfg.output.profile_stride
        )
        tables.append((directory / "fixed_profiles", fixed_columns, fixed_rows))
        tables.append((directory / "moving_profiles", moving_columns, moving_rows))

    summary: dict[str, Any] = {
        "outcome": status.outcome,
        "final_time": float(trajectory.times[-1]),
        "final_xstar": float(trajectory.fronts[-1]),
        "boundary_flag": status.boundary_flag,
    }

    if status.is_blowup:
        summary["t_blow"] = status.t_blow
        summary["t_circ"] = status.t_circ

    if scenario.similarity is not None:
        summary["relative_error"] = rows[-1][-1]

    exit_code = EXIT_BLOWUP if status.is_blowup and cfg.output.fail_on_blowup else EXIT_OK
    return status.outcome, exit_code, summary, tables


def _run_ensemble(scenario: Scenario, directory: Path) -> tuple[str, int, dict[str, Any], list[tuple[Path, list[str], list[list[Any]]]]]:
    cfg = scenario.config
    stats = run_ensemble(
        cfg.solver.to_solver_config(),
        scenario.model,
        scenario.kernel,
        scenario.initial,
        n_paths=cfg.ensemble.n_paths,
        workers=cfg.ensemble.workers,
    )

    summary: dict[str, Any] = {
        "n_paths": stats.n_paths,
        "blowup_count": stats.blowup_count,
        "blowup_frequency": stats.blowup_frequency,
        "boundary_flag_count": stats.boundary_flag_count,
    }

    outcome = "blowup" if stats.blowup_count else "completed"
    exit_code = EXIT_BLOWUP if stats.blowup_count and cfg.output.fail_on_blowup else EXIT_OK
    return outcome, exit_code, summary, [(directory / "ensemble", ENSEMBLE_COLUMNS, ensemble_rows(stats))]


def validation_rows(report: ValidationReport, kernel_report: KernelReport) -> list[list[Any]]:
    rows: list[list[Any]] = [[issue.severity, issue.coefficient, issue.message] for issue in report.issues]

    for check in kernel_report.checks:
        if not check.finite:
            rows.append(["error", f"kernel[{check.order}]", "Kernel slices are not square-integrable."])

    return rows


def _run_validate(scenario: Scenario, directory: Path) -> tuple[str, int, dict[str, Any], list[tuple[Path, list[str], list[list[Any]]]]]:
    report = validate_assumptions(scenario.model)
    kernel_report = check_kernel(scenario.kernel, hs_sample_points(scenario.grid, scenario.initial.xstar))

    print_validation_report(report)

    valid = report.is_valid and kernel_report.is_valid
    summary = {
        "valid": valid,
        "errors": sum(1 for issue in report.issues if issue.severity == "error"),
        "warnings": sum(1 for issue in report.issues if issue.severity == "warning"),
    }

    rows = validation_rows(report, kernel_report)
    return ("valid" if valid else "invalid"), EXIT_OK, summary, [(directory / "validation", ["severity", "coefficient", "message"], rows)]


def benchmark_rows(results: list[BenchmarkResult]) -> list[list[Any]]:
    return [[result.name, result.value, result.threshold, result.passed] for result in results]


def _run_benchmark(directory: Path, full: bool = False) -> tuple[str, int, dict[str, Any], list[tuple[Path, list[str], list[list[Any]]]]]:
    results = run_benchmarks(full=full)
    print_benchmark_results(results)

    passed = all(result.passed for result in results)
    summary = {result.name: result.value for result in results}
    return ("passed" if passed else "failed"), EXIT_OK, summary, [(directory / "benchmark", BENCHMARK_COLUMNS, benchmark_rows(results))]


def run(
    cfg: RunConfig,
    config_path: Path | None = None,
    database_path: Path | None = None,
) -> RunOutcome:
    """
    Execute one configured run and write its artifacts.

    Exit codes: 0 ok, 1 config, 2 blow-up with fail_on_blowup, 3 internal.
    """
    start = time.perf_counter()
    directory = Path(cfg.output.directory)
    logger.info("Run started: mode=%s seed=%d output=%s", cfg.mode, cfg.solver.seed, directory)

    try:
        if cfg.mode == "benchmark":
            status, exit_code, summary, tables = _run_benchmark(directory, cfg.benchmark.full)
        else:
            scenario = build_scenario(cfg, enforce_assumptions=cfg.mode != "validate")

            if cfg.mode == "single":
                status, exit_code, summary, tables = _run_single(scenario, directory)
            elif cfg.mode == "ensemble":
                status, exit_code, summary, tables = _run_ensemble(scenario, directory)
            else:
                status, exit_code, summary, tables = _run_validate(scenario, directory)

        wall_time_s = time.perf_counter() - start
        metadata = metadata_header(cfg, status)
        artifacts = [
            write_table(path, cfg.output.format, metadata, wall_time_s, columns, rows)
            for path, columns, rows in tables
        ]
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        outcome = RunOutcome(
            mode=cfg.mode,
            exit_code=EXIT_CONFIG,
            status="config_error",
            wall_time_s=time.perf_counter() - start,
            summary={"error": str(exc)},
        )
    except Exception as exc:
        logger.exception("Run failed")
        outcome = RunOutcome(
            mode=cfg.mode,
            exit_code=EXIT_INTERNAL,
            status="internal_error",
            wall_time_s=time.perf_counter() - start,
            summary={"error": str(exc)},
        )
    else:
        for artifact in artifacts:
            logger.info("Wrote %s", artifact)

        outcome = RunOutcome(
            mode=cfg.mode,
            exit_code=exit_code,
            status=status,
            artifacts=artifacts,
            wall_time_s=wall_time_s,
            summary=summary,
        )

    if database_path is not None:
        record_run(
            database_path=database_path,
            mode=cfg.mode,
            config_path=str(config_path) if config_path is not None else None,
            config_sha256=config_hash(cfg),
            seed=cfg.solver.seed,
            status=outcome.status,
            exit_code=outcome.exit_code,
            output_dir=str(directory),
            wall_time_s=outcome.wall_time_s,
        )

    return outcome


def print_run_summary(outcome: RunOutcome) -> None:
    print(f"Mode:      {outcome.mode}")
    print(f"Status:    {outcome.status}")
    print(f"Exit code: {outcome.exit_code}")
    print(f"Wall time: {outcome.wall_time_s:.2f}s")

    if outcome.summary:
        print()
        print("Summary:")

        for key, value in outcome.summary.items():
            print(f"  - {key}: {value}")

    if outcome.artifacts:
        print()
        print("Artifacts:")

        for artifact in outcome.artifacts:
            print(f"  - {artifact}")
