from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from smbsim.app.services.grid_core import Grid1D, PhaseProfile, SystemState, l2_norm_values
from smbsim.app.services.noise import hs_norm_bound, hs_norm_direct, hs_sample_points
from smbsim.app.services.presets import (
    build_kernel,
    build_model,
    gaussian_kernel,
    indicator_kernel,
    initial_state,
)
from smbsim.app.services.semigroup import SpectralLaplacian, smoothing_estimate
from smbsim.app.services.solver import SolverConfig, run_trajectory, run_truncated
from smbsim.app.services.validation import (
    StefanSimilarity,
    covariance_monte_carlo,
    heat_series_solution,
    stefan_front,
    stefan_profile,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def stefan_front_error(
    n: int = 400,
    L: float = 8.0,
    dt: float = 1e-5,
    t_end: float = 0.5,
    amplitude: float = 0.5,
    t0: float = 0.1,
) -> float:
    """
    Relative front error at t_end against x*(t) = 2 lam sqrt(eta (t0 + t)).
    """
    grid = Grid1D.from_length(n, L)
    model = build_model("stefan", {"varrho": 1.0, "sigma": 0.0}, c=0.0)
    kernel = indicator_kernel(0.0, 1.0)
    similarity = StefanSimilarity.build(eta=1.0, varrho=1.0, amplitude=amplitude, t0=t0)
    s0 = stefan_profile(similarity, 0.0, grid)

    cfg = SolverConfig(dt=dt, t_end=t_end, record_every=max(1, int(round(t_end / dt)) // 10))
    trajectory = run_trajectory(cfg, model, kernel, s0)
    reference = float(stefan_front(similarity, trajectory.times[-1]))
    return abs(trajectory.fronts[-1] - reference) / abs(reference)


def heat_errors(
    levels: tuple[int, ...] = (49, 99, 199),
    dt: float = 1e-3,
    t_end: float = 0.01,
) -> list[tuple[float, float]]:
    """
    (h, discrete L2 error) of the solver against the continuum sine series
    for p0 = sin(pi x) + 0.5 sin(3 pi x) on [0, 1].
    """
    model = build_model("stefan", {"varrho": 0.0, "sigma": 0.0}, c=0.0)
    kernel = indicator_kernel(0.0, 1.0)
    errors = []

    for n in levels:
        grid = Grid1D.from_length(n, 1.0)
        p0 = PhaseProfile.sample(grid, lambda x: np.sin(np.pi * x) + 0.5 * np.sin(3.0 * np.pi * x))
        s0 = SystemState(u1=p0, u2=PhaseProfile.zeros(grid), xstar=0.0)

        trajectory = run_trajectory(SolverConfig(dt=dt, t_end=t_end), model, kernel, s0)
        exact = heat_series_solution(p0, 1.0, float(trajectory.times[-1]))
        error = l2_norm_values(trajectory.final_state.u1.values - exact.values, grid.h)
        errors.append((grid.h, error))

    return errors


def observed_orders(errors: list[tuple[float, float]]) -> list[float]:
    return [
        math.log(coarse_error / fine_error) / math.log(coarse_h / fine_h)
        for (coarse_h, coarse_error), (fine_h, fine_error) in zip(errors, errors[1:])
    ]


def covariance_z_scores(n_samples: int = 2000, seed: int = 7) -> list[float]:
    kernel = gaussian_kernel(0.5, -4.0, 4.0)
    pairs = [(0.0, 0.0), (0.0, 0.25), (0.5, -0.5), (1.0, 1.2), (-1.0, 0.3)]
    estimates = covariance_monte_carlo(kernel, pairs, 0.5, n_samples, np.random.default_rng(seed))
    return [estimate.z_score for estimate in estimates]


def hs_violations(n_states: int = 50, seed: int = 11) -> int:
    rng = np.random.default_rng(seed)
    grid = Grid1D.from_length(31, 4.0)
    kernels = (build_kernel("gaussian", grid, 0.0, width=0.5), indicator_kernel(0.0, 1.0))
    violations = 0

    for kernel in kernels:
        for _ in range(n_states):
            xstar = float(rng.uniform(-0.5, 0.5))
            sigma_vals = (
                PhaseProfile(grid=grid, values=rng.standard_normal(grid.n) * np.sin(np.pi * grid.nodes / grid.L)),
                PhaseProfile(grid=grid, values=rng.standard_normal(grid.n) * np.sin(np.pi * grid.nodes / grid.L)),
            )
            eta_plus, eta_minus, c = rng.uniform(0.5, 2.0, size=3)
            direct = hs_norm_direct(kernel, sigma_vals, xstar, eta_plus, eta_minus, c)
            bound = hs_norm_bound(
                kernel,
                sigma_vals,
                xstar,
                eta_plus,
                eta_minus,
                c,
                sample_points=hs_sample_points(grid, xstar),
            )

            if direct > bound:
                violations += 1

    return violations


SMOOTHING_PAIRS = ((1.0, 0.0), (1.0, 0.5), (0.5, 0.0))


def smoothing_spread(levels: tuple[int, ...] = (100, 200, 400)) -> float:
    """
    Largest max/min ratio of the smoothing constants across grid levels.

    Both the sampled and the eigenmode constant count; a sampled constant
    above the eigenmode one makes the spread infinite.
    """
    t_grid = np.logspace(-9.0, 1.0, 200)
    worst = 1.0

    for alpha, beta in SMOOTHING_PAIRS:
        empirical: list[float] = []
        operator: list[float] = []

        for n in levels:
            sl = SpectralLaplacian(grid=Grid1D.from_length(n, 1.0), eta=1.0, c=1.0)
            report = smoothing_estimate(sl, alpha, beta, t_grid, samples=4, rng=np.random.default_rng(n))

            if report.empirical_constant > report.operator_constant * (1.0 + 1e-12):
                return math.inf

            empirical.append(report.empirical_constant)
            operator.append(report.operator_constant)

        for constants in (empirical, operator):
            worst = max(worst, max(constants) / min(constants))

    return worst


def truncation_mismatches(seeds: tuple[int, ...] = tuple(range(20)), n_steps: int = 200) -> int:
    """
    Count paired runs where truncated and plain paths differ before the
    first step whose starting norm exceeds N.
    """
    grid = Grid1D.from_length(63, 8.0)
    model = build_model("stefan", {"varrho": 1.0, "sigma": 0.5})
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    s0 = initial_state("bump", grid, amplitude=1.0, amplitude_minus=0.5)
    mismatches = 0

    for seed in seeds:
        cfg = SolverConfig(dt=1e-3, t_end=n_steps * 1e-3, seed=seed)
        plain = run_trajectory(cfg, model, kernel, s0)
        level = 1.05 * float(plain.graph_norms[0])
        truncated = run_truncated(cfg, model, kernel, s0, N=level)

        over = np.flatnonzero(plain.graph_norms > level)
        last = int(over[0]) if over.size else len(plain.states) - 1

        for index in range(last + 1):
            a = plain.states[index]
            b = truncated.states[index]

            if not (
                np.array_equal(a.u1.values, b.u1.values)
                and np.array_equal(a.u2.values, b.u2.values)
                and a.xstar == b.xstar
            ):
                mismatches += 1
                break

    return mismatches


def _timed(name: str, threshold: float, measure: Callable[[], tuple[float, bool, str]]) -> BenchmarkResult:
    start = time.perf_counter()
    value, passed, detail = measure()
    seconds = time.perf_counter() - start
    logger.info("Benchmark %s: %.6g (threshold %.3g) %s", name, value, threshold, "ok" if passed else "FAILED")
    return BenchmarkResult(name=name, value=value, threshold=threshold, passed=passed, detail=detail, seconds=seconds)


def _stefan_smoke() -> tuple[float, bool, str]:
    error = stefan_front_error(n=200, dt=1e-4, t_end=0.1)
    return error, error <= 0.02, "relative front error, n=200 dt=1e-4 t=0.1"


def _stefan() -> tuple[float, bool, str]:
    error = stefan_front_error()
    return error, error <= 0.01, "relative front error, n=400 dt=1e-5 t=0.5"


def _heat() -> tuple[float, bool, str]:
    errors = heat_errors()
    order = min(observed_orders(errors))
    within = all(error <= 5.0 * (h * h + 1e-3) for h, error in errors)
    return order, order >= 1.9 and within, "observed spatial order"


def _covariance() -> tuple[float, bool, str]:
    worst = max(covariance_z_scores())
    return worst, worst <= 3.0, "largest z-score over 5 pairs"


def _hs() -> tuple[float, bool, str]:
    violations = hs_violations()
    return float(violations), violations == 0, "states with direct > bound"


def _smoothing() -> tuple[float, bool, str]:
    spread = smoothing_spread()
    return spread, spread <= 2.0, "max/min constant across grids"


def _truncation() -> tuple[float, bool, str]:
    mismatches = truncation_mismatches()
    return float(mismatches), mismatches == 0, "seeds with a mismatch before the crossing"


Measure = Callable[[], tuple[float, bool, str]]

BENCHMARKS: dict[str, tuple[float, Measure]] = {
    "stefan_front_smoke": (0.02, _stefan_smoke),
    "heat_cross_check": (1.9, _heat),
    "covariance": (3.0, _covariance),
    "hs_inequality": (0.0, _hs),
    "smoothing": (2.0, _smoothing),
    "truncation_coincidence": (0.0, _truncation),
}

# Acceptance-scale runs, only with full=True.
FULL_BENCHMARKS: dict[str, tuple[float, Measure]] = {
    "stefan_front": (0.01, _stefan),
}


def run_benchmarks(names: list[str] | None = None, full: bool = False) -> list[BenchmarkResult]:
    known = {**BENCHMARKS, **FULL_BENCHMARKS}
    selected = names or list(BENCHMARKS) + (list(FULL_BENCHMARKS) if full else [])
    unknown = [name for name in selected if name not in known]

    if unknown:
        raise ValueError(f"Unknown benchmarks: {', '.join(unknown)}. Known: {', '.join(known)}.")

    return [_timed(name, *known[name]) for name in selected]


def print_benchmark_results(results: list[BenchmarkResult]) -> None:
    if not results:
        print("No benchmarks run.")
        return

    for result in results:
        print(
            f"[{'PASS' if result.passed else 'FAIL'}] {result.name}: "
            f"{result.value:.6g} (threshold {result.threshold:g}, {result.detail}, {result.seconds:.1f}s)"
        )

    failed = sum(1 for result in results if not result.passed)

    print()
    if failed:
        print(f"{failed} of {len(results)} benchmarks failed.")
    else:
        print(f"All {len(results)} benchmarks passed.")
