from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from smbsim.app.services.coefficients import (
    ModelCoefficients,
    TruncationLevel,
    drift_values,
    sigma_values,
    truncate_coefficient,
)
from smbsim.app.services.errors import BlowUpError, ContractError, InvalidStateError
from smbsim.app.services.grid_core import (
    BoundaryTrace,
    Grid1D,
    SystemState,
    graph_norm_values,
    trace_value,
)
from smbsim.app.services.noise import (
    NoiseIncrement,
    NoiseKernel,
    diffusion_increment_values,
    increment_scale,
)
from smbsim.app.services.semigroup import SpectralLaplacian


logger = logging.getLogger(__name__)

SCHEMES = ("exponential_euler", "semi_implicit_euler")

COMPLETED = "completed"
BLOWUP = "blowup"


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    truncation_N: float | None = None
    blowup_threshold: float = 1e6
    boundary_threshold: float = 1e3
    seed: int = 0
    scheme: str = "exponential_euler"
    record_every: int = 1
    record_noise: bool = False

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}.")

        if not self.t_end > 0.0:
            raise ValueError(f"t_end must be positive, got {self.t_end}.")

        if self.dt > self.t_end:
            raise ValueError(f"dt={self.dt} exceeds t_end={self.t_end}.")

        if self.truncation_N is not None and self.truncation_N < 0.0:
            raise ValueError(f"truncation_N must be non-negative, got {self.truncation_N}.")

        if self.blowup_threshold <= 0.0 or self.boundary_threshold <= 0.0:
            raise ValueError("Blow-up and boundary thresholds must be positive.")

        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}.")

        if self.scheme not in SCHEMES:
            raise ValueError(f"Unknown scheme {self.scheme!r}. Expected one of {', '.join(SCHEMES)}.")

        if self.record_every < 1:
            raise ValueError(f"record_every must be at least 1, got {self.record_every}.")

    @property
    def n_steps(self) -> int:
        # t_end / dt up to rounding, so 0.5 / 1e-5 gives 50000 steps.
        return max(1, int(math.floor(self.t_end / self.dt + 1e-9)))


@dataclass(frozen=True)
class TrajectoryStatus:
    """
    completed, or blowup at t_blow with the observed graph norm.

    boundary_flag/t_circ record the first time the boundary trace
    reached boundary_threshold, independently of the outcome.
    """

    outcome: str = COMPLETED
    t_blow: float | None = None
    step_blow: int | None = None
    graph_norm: float | None = None
    boundary_flag: bool = False
    t_circ: float | None = None

    @property
    def is_blowup(self) -> bool:
        return self.outcome == BLOWUP


@dataclass(frozen=True, eq=False)
class FixedFrameTrajectory:
    grid: Grid1D
    dt: float
    times: np.ndarray
    step_indices: np.ndarray
    fronts: np.ndarray
    traces: np.ndarray
    graph_norms: np.ndarray
    l2_norms: np.ndarray
    states: tuple[SystemState, ...]
    status: TrajectoryStatus
    noise: tuple[NoiseIncrement, ...] | None = None
    front_rates: np.ndarray | None = None

    def trace(self, index: int) -> BoundaryTrace:
        return BoundaryTrace(g1=float(self.traces[index, 0]), g2=float(self.traces[index, 1]))

    @property
    def final_state(self) -> SystemState | None:
        return self.states[-1] if self.states else None


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    times: np.ndarray
    front_mean: np.ndarray
    front_var: np.ndarray
    alive: np.ndarray
    g1_mean: np.ndarray
    g2_mean: np.ndarray
    n_paths: int
    blowup_count: int
    boundary_flag_count: int
    blowup_times: tuple[float, ...]

    @property
    def blowup_frequency(self) -> float:
        return self.blowup_count / self.n_paths


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """
    Independent stream per path, derived from (seed, path_index) only.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_index,)))


@dataclass(frozen=True, eq=False)
class _StepContext:
    grid: Grid1D
    mc: ModelCoefficients
    k: NoiseKernel
    dt: float
    factors1: np.ndarray
    factors2: np.ndarray
    operator1: SpectralLaplacian
    operator2: SpectralLaplacian
    level: TruncationLevel | None = None

    @classmethod
    def build(
        cls,
        sl_pair: tuple[SpectralLaplacian, SpectralLaplacian],
        mc: ModelCoefficients,
        k: NoiseKernel,
        dt: float,
        scheme: str,
        level: TruncationLevel | None = None,
    ) -> _StepContext:
        operator1, operator2 = sl_pair

        if operator1.grid != operator2.grid:
            raise ContractError("Both spectral operators must live on the same grid.")

        if scheme == "exponential_euler":
            factors1 = operator1.propagator(dt)
            factors2 = operator2.propagator(dt)
        elif scheme == "semi_implicit_euler":
            factors1 = operator1.resolvent_factors(dt)
            factors2 = operator2.resolvent_factors(dt)
        else:
            raise ValueError(f"Unknown scheme {scheme!r}. Expected one of {', '.join(SCHEMES)}.")

        return cls(
            grid=operator1.grid,
            mc=mc,
            k=k,
            dt=dt,
            factors1=factors1,
            factors2=factors2,
            operator1=operator1,
            operator2=operator2,
            level=level,
        )

    def norm(self, u1: np.ndarray, u2: np.ndarray, xstar: float) -> float:
        return graph_norm_values(
            u1,
            u2,
            xstar,
            self.grid.h,
            eta_plus=self.mc.eta_plus,
            eta_minus=self.mc.eta_minus,
            c=self.mc.c,
        )


def _advance(
    ctx: _StepContext,
    u1: np.ndarray,
    u2: np.ndarray,
    xstar: float,
    w: np.ndarray,
    t: float,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """
    One step with coefficients frozen at the left endpoint; t is the time
    reached by the step.

    Returns (u1, u2, x*, front rate) after the step.
    """
    h = ctx.grid.h
    dt = ctx.dt
    g1 = trace_value(u1, h)
    g2 = trace_value(u2, h)

    drift1, drift2, _, rho = drift_values(ctx.mc, ctx.grid, u1, u2, xstar, g1, g2)
    sigma1, sigma2 = sigma_values(ctx.mc, ctx.grid, u1, u2)
    noise1, noise2 = diffusion_increment_values(ctx.k, ctx.grid, xstar, sigma1, sigma2, w)

    level = ctx.level
    norm = 0.0 if level is None else ctx.norm(u1, u2, xstar)
    factor = 1.0 if level is None else level.factor(norm)

    if factor == 1.0:
        # The c*x* terms of A and B cancel on the front.
        rate = rho
    else:
        drift1 = truncate_coefficient(level, norm, drift1)
        drift2 = truncate_coefficient(level, norm, drift2)
        noise1 = truncate_coefficient(level, norm, noise1)
        noise2 = truncate_coefficient(level, norm, noise2)
        rate = factor * rho + (factor - 1.0) * ctx.mc.c * xstar

    next_u1 = ctx.operator1.apply_factors(u1 + dt * drift1 + noise1, ctx.factors1)
    next_u2 = ctx.operator2.apply_factors(u2 + dt * drift2 + noise2, ctx.factors2)
    next_xstar = xstar + dt * rate

    if not (np.isfinite(next_u1).all() and np.isfinite(next_u2).all() and math.isfinite(next_xstar)):
        raise BlowUpError(f"Step to t={t:g} produced a non-finite state.", time=t, norm=math.inf)

    return next_u1, next_u2, next_xstar, rate


def step(
    sl_pair: tuple[SpectralLaplacian, SpectralLaplacian],
    mc: ModelCoefficients,
    k: NoiseKernel,
    s: SystemState,
    dt: float,
    rng: np.random.Generator,
    scheme: str = "exponential_euler",
    t: float = 0.0,
) -> SystemState:
    """
    u+ = S_dt(u + dt*B(u) + C(u)dW), x*+ = x* + dt*rho(I(u)).

    The semi-implicit scheme replaces S_dt by (1 - dt*A)^{-1}.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}.")

    if not s.is_valid:
        raise InvalidStateError("Cannot step from a non-finite state.")

    ctx = _StepContext.build(sl_pair, mc, k, dt, scheme)
    w = rng.normal(0.0, increment_scale(k, dt), size=k.m_y)
    u1, u2, xstar, _ = _advance(ctx, s.u1.values, s.u2.values, s.xstar, w, t + dt)

    return SystemState.from_arrays(s.grid, u1, u2, xstar)


class _Recorder:
    def __init__(self, grid: Grid1D, keep_states: bool) -> None:
        self.grid = grid
        self.keep_states = keep_states
        self.steps: list[int] = []
        self.fronts: list[float] = []
        self.traces: list[tuple[float, float]] = []
        self.graph_norms: list[float] = []
        self.l2_norms: list[float] = []
        self.states: list[SystemState] = []

    def record(
        self,
        index: int,
        u1: np.ndarray,
        u2: np.ndarray,
        xstar: float,
        trace: tuple[float, float],
        norm: float,
    ) -> None:
        self.steps.append(index)
        self.fronts.append(xstar)
        self.traces.append(trace)
        self.graph_norms.append(norm)
        self.l2_norms.append(float(np.sqrt(self.grid.h * (np.dot(u1, u1) + np.dot(u2, u2)))))

        if self.keep_states:
            self.states.append(SystemState.from_arrays(self.grid, u1, u2, xstar))


def _integrate(
    cfg: SolverConfig,
    mc: ModelCoefficients,
    k: NoiseKernel,
    s0: SystemState,
    truncation_N: float | None,
    keep_states: bool = True,
    path_index: int = 0,
    replay: Sequence[NoiseIncrement] | None = None,
) -> FixedFrameTrajectory:
    if not s0.is_valid:
        raise InvalidStateError("Initial state is not finite.")

    grid = s0.grid
    dt = cfg.dt
    n_steps = cfg.n_steps

    if replay is not None:
        if len(replay) < n_steps:
            raise ContractError(f"Replayed noise has {len(replay)} increments, need {n_steps}.")

        if any(increment.w.shape != (k.m_y,) for increment in replay):
            raise ContractError(f"Replayed increments must have {k.m_y} cells.")

    sl_pair = (
        SpectralLaplacian(grid=grid, eta=mc.eta_plus, c=mc.c),
        SpectralLaplacian(grid=grid, eta=mc.eta_minus, c=mc.c),
    )
    level = None if truncation_N is None else TruncationLevel(N=truncation_N)
    ctx = _StepContext.build(sl_pair, mc, k, dt, cfg.scheme, level)

    rng = path_rng(cfg.seed, path_index)
    scale = increment_scale(k, dt)

    u1 = np.array(s0.u1.values)
    u2 = np.array(s0.u2.values)
    xstar = s0.xstar

    recorder = _Recorder(grid, keep_states)
    noise: list[NoiseIncrement] = []
    rates: list[float] = []

    boundary_flag = False
    t_circ: float | None = None
    status = TrajectoryStatus()

    def crossed(trace: tuple[float, float]) -> bool:
        return not all(math.isfinite(g) for g in trace) or max(abs(trace[0]), abs(trace[1])) >= cfg.boundary_threshold

    trace = (trace_value(u1, grid.h), trace_value(u2, grid.h))
    recorder.record(0, u1, u2, xstar, trace, ctx.norm(u1, u2, xstar))

    if crossed(trace):
        boundary_flag, t_circ = True, 0.0

    for index in range(1, n_steps + 1):
        t = index * dt

        # Drawn every step so that streams stay aligned across coefficient choices.
        if replay is not None:
            w = np.asarray(replay[index - 1].w)
        else:
            w = rng.normal(0.0, scale, size=k.m_y)

        try:
            u1, u2, xstar, rate = _advance(ctx, u1, u2, xstar, w, t)
        except BlowUpError as exc:
            logger.info("Path %d: %s", path_index, exc)
            status = TrajectoryStatus(
                outcome=BLOWUP,
                t_blow=exc.time,
                step_blow=index,
                graph_norm=exc.norm,
                boundary_flag=boundary_flag,
                t_circ=t_circ,
            )
            break
        except InvalidStateError as exc:
            logger.info("Path %d: non-finite coefficients at t=%g: %s", path_index, t, exc)
            status = TrajectoryStatus(
                outcome=BLOWUP,
                t_blow=t,
                step_blow=index,
                graph_norm=math.inf,
                boundary_flag=boundary_flag,
                t_circ=t_circ,
            )
            break

        if cfg.record_noise:
            noise.append(NoiseIncrement(w=w, dt=dt))
            rates.append(rate)

        trace = (trace_value(u1, grid.h), trace_value(u2, grid.h))
        norm = ctx.norm(u1, u2, xstar)

        if not boundary_flag and crossed(trace):
            boundary_flag, t_circ = True, t

        if not math.isfinite(norm) or norm >= cfg.blowup_threshold:
            recorder.record(index, u1, u2, xstar, trace, norm)
            logger.info("Path %d: graph norm %g reached the threshold at t=%g.", path_index, norm, t)
            status = TrajectoryStatus(
                outcome=BLOWUP,
                t_blow=t,
                step_blow=index,
                graph_norm=norm,
                boundary_flag=boundary_flag,
                t_circ=t_circ,
            )
            break

        if index % cfg.record_every == 0 or index == n_steps:
            recorder.record(index, u1, u2, xstar, trace, norm)
    else:
        status = TrajectoryStatus(boundary_flag=boundary_flag, t_circ=t_circ)

    steps = np.asarray(recorder.steps, dtype=int)

    return FixedFrameTrajectory(
        grid=grid,
        dt=dt,
        times=steps * dt,
        step_indices=steps,
        fronts=np.asarray(recorder.fronts, dtype=float),
        traces=np.asarray(recorder.traces, dtype=float).reshape(-1, 2),
        graph_norms=np.asarray(recorder.graph_norms, dtype=float),
        l2_norms=np.asarray(recorder.l2_norms, dtype=float),
        states=tuple(recorder.states),
        status=status,
        noise=tuple(noise) if cfg.record_noise else None,
        front_rates=np.asarray(rates, dtype=float) if cfg.record_noise else None,
    )


def run_trajectory(
    cfg: SolverConfig,
    mc: ModelCoefficients,
    k: NoiseKernel,
    s0: SystemState,
    replay_noise: Sequence[NoiseIncrement] | None = None,
) -> FixedFrameTrajectory:
    """
    Integrate one path over [0, t_end], truncated at cfg.truncation_N when set.

    With replay_noise the recorded increments are used instead of the
    seeded stream.
    """
    return _integrate(cfg, mc, k, s0, cfg.truncation_N, replay=replay_noise)


def run_truncated(
    cfg: SolverConfig,
    mc: ModelCoefficients,
    k: NoiseKernel,
    s0: SystemState,
    N: float | None = None,
) -> FixedFrameTrajectory:
    level = cfg.truncation_N if N is None else N

    if level is None:
        raise ContractError("run_truncated needs a truncation level.")

    if level < 0.0:
        raise ValueError(f"Truncation level must be non-negative, got {level}.")

    return _integrate(cfg, mc, k, s0, level)


def coarsen_noise(noise: Sequence[NoiseIncrement], factor: int = 2) -> tuple[NoiseIncrement, ...]:
    """
    Sum consecutive fine increments into increments of factor * dt.
    """
    if factor < 1 or len(noise) % factor != 0:
        raise ValueError(f"Cannot group {len(noise)} increments in blocks of {factor}.")

    coarse = []

    for start in range(0, len(noise), factor):
        total = noise[start]

        for increment in noise[start + 1 : start + factor]:
            total = total + increment

        coarse.append(total)

    return tuple(coarse)


def sample_noise_path(k: NoiseKernel, dt: float, n_steps: int, rng: np.random.Generator) -> tuple[NoiseIncrement, ...]:
    scale = increment_scale(k, dt)
    return tuple(NoiseIncrement(w=rng.normal(0.0, scale, size=k.m_y), dt=dt) for _ in range(n_steps))


def _record_grid(cfg: SolverConfig) -> np.ndarray:
    steps = np.arange(0, cfg.n_steps + 1, cfg.record_every, dtype=int)

    if steps[-1] != cfg.n_steps:
        steps = np.append(steps, cfg.n_steps)

    return steps


def run_ensemble(
    cfg: SolverConfig,
    mc: ModelCoefficients,
    k: NoiseKernel,
    s0: SystemState,
    n_paths: int,
    workers: int = 1,
) -> EnsembleStats:
    """
    Independent paths with streams (seed, index); path 0 is run_trajectory's path.

    Means are taken over the paths still alive at each recorded step.
    Aggregation runs in path order, so the result does not depend on workers.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}.")

    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}.")

    def one_path(index: int) -> FixedFrameTrajectory:
        trajectory = _integrate(cfg, mc, k, s0, cfg.truncation_N, keep_states=False, path_index=index)
        logger.debug("Path %d finished: %s", index, trajectory.status.outcome)
        return trajectory

    with ThreadPoolExecutor(max_workers=workers) as pool:
        trajectories = list(pool.map(one_path, range(n_paths)))

    steps = _record_grid(cfg)
    column = {int(step): position for position, step in enumerate(steps)}

    fronts = np.zeros((n_paths, steps.size))
    g1 = np.zeros((n_paths, steps.size))
    g2 = np.zeros((n_paths, steps.size))
    mask = np.zeros((n_paths, steps.size), dtype=bool)

    for path, trajectory in enumerate(trajectories):
        step_blow = trajectory.status.step_blow

        for row, step_index in enumerate(trajectory.step_indices):
            position = column.get(int(step_index))

            if position is None or (step_blow is not None and step_index >= step_blow):
                continue

            fronts[path, position] = trajectory.fronts[row]
            g1[path, position] = trajectory.traces[row, 0]
            g2[path, position] = trajectory.traces[row, 1]
            mask[path, position] = True

    alive = mask.sum(axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        front_mean = np.where(alive > 0, fronts.sum(axis=0) / alive, np.nan)
        deviations = np.where(mask, fronts - front_mean[None, :], 0.0)
        front_var = np.where(alive > 0, (deviations**2).sum(axis=0) / alive, np.nan)
        g1_mean = np.where(alive > 0, g1.sum(axis=0) / alive, np.nan)
        g2_mean = np.where(alive > 0, g2.sum(axis=0) / alive, np.nan)

    blown = [trajectory.status for trajectory in trajectories if trajectory.status.is_blowup]

    logger.info("Ensemble of %d paths finished with %d blow-ups.", n_paths, len(blown))

    return EnsembleStats(
        times=steps * cfg.dt,
        front_mean=front_mean,
        front_var=front_var,
        alive=alive,
        g1_mean=g1_mean,
        g2_mean=g2_mean,
        n_paths=n_paths,
        blowup_count=len(blown),
        boundary_flag_count=sum(1 for trajectory in trajectories if trajectory.status.boundary_flag),
        blowup_times=tuple(float(status.t_blow) for status in blown),
    )
