from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from smbsim.app.services.benchmarks import (
    heat_errors,
    observed_orders,
    stefan_front_error,
    truncation_mismatches,
)
from smbsim.app.services.errors import BlowUpError, ContractError
from smbsim.app.services.grid_core import Grid1D, PhaseProfile, SystemState, graph_norm, l2_norm_values
from smbsim.app.services.noise import NoiseIncrement
from smbsim.app.services.presets import build_kernel, build_model, indicator_kernel, initial_state
from smbsim.app.services.semigroup import SpectralLaplacian
from smbsim.app.services.solver import (
    SolverConfig,
    coarsen_noise,
    path_rng,
    run_ensemble,
    run_trajectory,
    run_truncated,
    sample_noise_path,
    step,
)
from smbsim.app.services.validation import heat_series_solution


def noisy_setup(n: int = 31, L: float = 4.0, sigma: float = 0.5, amplitude: float = 1.0):
    grid = Grid1D.from_length(n, L)
    model = build_model("stefan", {"varrho": 0.5, "sigma": sigma})
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    s0 = initial_state("bump", grid, amplitude=amplitude, amplitude_minus=0.5 * amplitude)
    return grid, model, kernel, s0


def heat_model():
    return build_model("stefan", {"varrho": 0.0, "sigma": 0.0}, c=0.0)


def same_path(a, b) -> bool:
    return all(
        np.array_equal(x.u1.values, y.u1.values)
        and np.array_equal(x.u2.values, y.u2.values)
        and x.xstar == y.xstar
        for x, y in zip(a.states, b.states, strict=True)
    )


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"dt": 0.0, "t_end": 1.0}, "dt must be positive"),
        ({"dt": 2.0, "t_end": 1.0}, "exceeds"),
        ({"dt": 0.1, "t_end": 1.0, "scheme": "rk4"}, "Unknown scheme"),
        ({"dt": 0.1, "t_end": 1.0, "seed": -1}, "unsigned"),
        ({"dt": 0.1, "t_end": 1.0, "truncation_N": -1.0}, "truncation_N"),
        ({"dt": 0.1, "t_end": 1.0, "record_every": 0}, "record_every"),
    ],
)
def test_solver_config_is_validated(kwargs, message):
    with pytest.raises(ValueError, match=message):
        SolverConfig(**kwargs)


def test_step_count_tolerates_rounding():
    assert SolverConfig(dt=1e-5, t_end=0.5).n_steps == 50000
    assert SolverConfig(dt=0.3, t_end=1.0).n_steps == 3


def test_zero_state_is_a_fixed_point():
    grid, model, kernel, _ = noisy_setup()
    s0 = SystemState.zeros(grid)
    trajectory = run_trajectory(SolverConfig(dt=1e-3, t_end=0.05, seed=3), model, kernel, s0)

    assert not trajectory.status.is_blowup
    assert np.all(trajectory.fronts == 0.0)
    assert all(np.all(s.u1.values == 0.0) and np.all(s.u2.values == 0.0) for s in trajectory.states)


def test_same_seed_same_path():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.05, seed=11)

    first = run_trajectory(cfg, model, kernel, s0)
    second = run_trajectory(cfg, model, kernel, s0)
    other = run_trajectory(SolverConfig(dt=1e-3, t_end=0.05, seed=12), model, kernel, s0)

    assert same_path(first, second)
    assert not np.array_equal(first.final_state.u1.values, other.final_state.u1.values)


def test_path_streams_are_independent_of_each_other():
    a = path_rng(5, 0).normal(size=4)
    b = path_rng(5, 1).normal(size=4)

    assert np.array_equal(a, path_rng(5, 0).normal(size=4))
    assert not np.array_equal(a, b)


def test_records_start_at_time_zero():
    _, model, kernel, s0 = noisy_setup()
    trajectory = run_trajectory(SolverConfig(dt=1e-3, t_end=0.01, record_every=3), model, kernel, s0)

    assert list(trajectory.step_indices) == [0, 3, 6, 9, 10]
    assert trajectory.times[0] == 0.0
    assert np.array_equal(trajectory.states[0].u1.values, s0.u1.values)
    assert trajectory.graph_norms[0] == pytest.approx(graph_norm(s0))


@pytest.mark.parametrize("scheme", ["exponential_euler", "semi_implicit_euler"])
def test_single_step_on_a_sine_mode(scheme):
    grid = Grid1D.from_length(63, 1.0)
    sl = SpectralLaplacian(grid=grid, eta=1.0, c=0.0)
    mode = sl.eigenvector(2)
    s = SystemState(u1=mode, u2=PhaseProfile.zeros(grid), xstar=0.25)
    dt = 1e-3

    stepped = step((sl, sl), heat_model(), indicator_kernel(0.0, 1.0), s, dt, np.random.default_rng(0), scheme)

    lam = sl.eigenvalues[1]
    factor = math.exp(dt * lam) if scheme == "exponential_euler" else 1.0 / (1.0 - dt * lam)
    assert np.allclose(stepped.u1.values, factor * mode.values, atol=1e-13)
    assert stepped.xstar == 0.25


def runaway_front_model():
    expressions = {"mu_plus": "0", "mu_minus": "0", "sigma_plus": "0", "sigma_minus": "0", "rho": "1e308"}
    return build_model("custom", expressions=expressions, c=0.0)


def test_overflowing_step_reports_time_and_norm():
    grid = Grid1D.from_length(15, 1.0)
    sl = SpectralLaplacian(grid=grid, eta=1.0, c=0.0)
    s = SystemState(u1=PhaseProfile.zeros(grid), u2=PhaseProfile.zeros(grid), xstar=1.7e308)

    with pytest.raises(BlowUpError) as caught:
        step((sl, sl), runaway_front_model(), indicator_kernel(0.0, 1.0), s, 1.0, np.random.default_rng(0), t=0.5)

    assert caught.value.time == 1.5
    assert caught.value.norm == math.inf


def test_overflow_is_a_blowup_at_the_reached_time():
    grid = Grid1D.from_length(15, 1.0)
    s0 = SystemState(u1=PhaseProfile.zeros(grid), u2=PhaseProfile.zeros(grid), xstar=1.7e308)
    cfg = SolverConfig(dt=0.5, t_end=2.0)

    status = run_trajectory(cfg, runaway_front_model(), indicator_kernel(0.0, 1.0), s0).status

    assert status.is_blowup
    assert status.t_blow == 0.5
    assert status.step_blow == 1
    assert status.graph_norm == math.inf


def test_exponential_and_semi_implicit_steps_agree_to_second_order():
    grid, _, kernel, s0 = noisy_setup()
    model = build_model("stefan", {"varrho": 0.5, "sigma": 0.0})
    sl = SpectralLaplacian(grid=grid, eta=1.0, c=model.c)
    gaps = []

    for dt in (2e-4, 1e-4, 5e-5):
        mild = step((sl, sl), model, kernel, s0, dt, np.random.default_rng(0), "exponential_euler")
        implicit = step((sl, sl), model, kernel, s0, dt, np.random.default_rng(0), "semi_implicit_euler")
        gaps.append(
            l2_norm_values(mild.u1.values - implicit.u1.values, grid.h)
            + l2_norm_values(mild.u2.values - implicit.u2.values, grid.h)
        )

        assert mild.xstar == implicit.xstar

    assert gaps[0] / gaps[1] > 3.5
    assert gaps[1] / gaps[2] > 3.5


def test_heat_solution_matches_the_continuum_series():
    grid = Grid1D.from_length(399, 1.0)
    p0 = PhaseProfile.sample(grid, lambda x: np.sin(np.pi * x))
    s0 = SystemState(u1=p0, u2=PhaseProfile.zeros(grid), xstar=0.0)

    trajectory = run_trajectory(SolverConfig(dt=1e-3, t_end=0.01), heat_model(), indicator_kernel(0.0, 1.0), s0)
    exact = heat_series_solution(p0, 1.0, 0.01)

    assert l2_norm_values(trajectory.final_state.u1.values - exact.values, grid.h) <= 1e-6


def test_heat_error_is_second_order_in_space():
    orders = observed_orders(heat_errors())

    assert min(orders) >= 1.9


def test_front_is_fixed_without_a_front_law():
    _, _, kernel, s0 = noisy_setup()
    model = build_model("stefan", {"varrho": 0.0, "sigma": 0.5})
    shifted = SystemState(u1=s0.u1, u2=s0.u2, xstar=0.7)
    trajectory = run_trajectory(SolverConfig(dt=1e-3, t_end=0.05, seed=1), model, kernel, shifted)

    assert np.all(trajectory.fronts == 0.7)


def test_truncated_and_plain_paths_coincide_below_the_level():
    assert truncation_mismatches(seeds=(0, 1), n_steps=50) == 0


@pytest.mark.bench
def test_truncated_and_plain_paths_coincide_on_twenty_seeds():
    assert truncation_mismatches(seeds=tuple(range(20))) == 0


def test_large_truncation_level_reproduces_the_plain_path():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.02, seed=4)

    assert same_path(run_trajectory(cfg, model, kernel, s0), run_truncated(cfg, model, kernel, s0, N=1e9))


def test_zero_truncation_level_leaves_pure_decay():
    grid, model, kernel, s0 = noisy_setup(amplitude=20.0)
    start = SystemState(u1=s0.u1, u2=s0.u2, xstar=0.5)
    cfg = SolverConfig(dt=1e-3, t_end=0.005, seed=2)
    trajectory = run_truncated(cfg, model, kernel, start, N=0.0)

    assert trajectory.graph_norms.min() > 1.0

    sl = SpectralLaplacian(grid=grid, eta=1.0, c=model.c)
    decayed = sl.apply_factors(s0.u1.values, sl.propagator(0.005))
    assert np.allclose(trajectory.final_state.u1.values, decayed, atol=1e-12)
    assert trajectory.fronts[-1] == pytest.approx(0.5 * (1.0 - 1e-3 * model.c) ** 5)


def test_run_truncated_needs_a_level():
    _, model, kernel, s0 = noisy_setup()

    with pytest.raises(ContractError, match="truncation level"):
        run_truncated(SolverConfig(dt=1e-3, t_end=0.01), model, kernel, s0)


def test_config_level_is_used_by_run_trajectory():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.01, seed=6, truncation_N=0.0)

    assert same_path(run_trajectory(cfg, model, kernel, s0), run_truncated(cfg, model, kernel, s0))


def test_replayed_noise_reproduces_the_path():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.02, seed=9, record_noise=True)
    recorded = run_trajectory(cfg, model, kernel, s0)
    replayed = run_trajectory(cfg, model, kernel, s0, replay_noise=recorded.noise)

    assert len(recorded.noise) == cfg.n_steps
    assert recorded.front_rates.shape == (cfg.n_steps,)
    assert same_path(recorded, replayed)


def test_replayed_noise_is_checked():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.02)

    with pytest.raises(ContractError, match="increments"):
        run_trajectory(cfg, model, kernel, s0, replay_noise=[NoiseIncrement.zeros(kernel, 1e-3)])

    wrong = [NoiseIncrement(w=np.zeros(kernel.m_y + 1), dt=1e-3)] * cfg.n_steps
    with pytest.raises(ContractError, match="cells"):
        run_trajectory(cfg, model, kernel, s0, replay_noise=wrong)


def test_coarsen_noise_sums_blocks():
    fine = [NoiseIncrement(w=np.full(2, float(i)), dt=0.1) for i in range(4)]
    coarse = coarsen_noise(fine, 2)

    assert len(coarse) == 2
    assert np.all(coarse[0].w == 1.0)
    assert np.all(coarse[1].w == 5.0)
    assert coarse[1].dt == pytest.approx(0.2)

    with pytest.raises(ValueError, match="blocks"):
        coarsen_noise(fine, 3)


def test_threshold_crossing_stops_the_path():
    _, model, kernel, s0 = noisy_setup(sigma=0.0)
    threshold = 0.5 * graph_norm(s0)
    cfg = SolverConfig(dt=1e-3, t_end=0.05, blowup_threshold=threshold, boundary_threshold=0.1)
    trajectory = run_trajectory(cfg, model, kernel, s0)
    status = trajectory.status

    assert status.is_blowup
    assert status.step_blow == 1
    assert status.t_blow == pytest.approx(1e-3)
    assert status.graph_norm >= threshold
    assert list(trajectory.step_indices) == [0, 1]
    assert status.boundary_flag
    assert status.t_circ == 0.0


def test_ensemble_excludes_records_after_blowup():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.01, blowup_threshold=0.5 * graph_norm(s0))
    stats = run_ensemble(cfg, model, kernel, s0, n_paths=3)

    assert stats.blowup_count == 3
    assert stats.blowup_frequency == 1.0
    assert stats.alive[0] == 3
    assert np.all(stats.alive[1:] == 0)
    assert np.all(np.isnan(stats.front_mean[1:]))
    assert stats.blowup_times == (1e-3, 1e-3, 1e-3)


def test_single_path_ensemble_is_run_trajectory():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.02, seed=21)
    stats = run_ensemble(cfg, model, kernel, s0, n_paths=1)
    trajectory = run_trajectory(cfg, model, kernel, s0)

    assert np.array_equal(stats.front_mean, trajectory.fronts)
    assert np.array_equal(stats.g1_mean, trajectory.traces[:, 0])
    assert np.all(stats.front_var == 0.0)


def test_ensemble_without_noise_has_no_spread():
    _, model, kernel, s0 = noisy_setup(sigma=0.0)
    stats = run_ensemble(SolverConfig(dt=1e-3, t_end=0.02, seed=1), model, kernel, s0, n_paths=5)

    assert np.allclose(stats.front_var, 0.0, atol=1e-24)
    assert np.all(stats.alive == 5)


@pytest.mark.parametrize("workers", [1, 4, 8])
def test_ensemble_does_not_depend_on_workers(workers):
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.02, seed=8, record_every=5)

    serial = run_ensemble(cfg, model, kernel, s0, n_paths=8, workers=1)
    threaded = run_ensemble(cfg, model, kernel, s0, n_paths=8, workers=workers)

    for name in ("front_mean", "front_var", "g1_mean", "g2_mean", "alive"):
        assert np.array_equal(getattr(serial, name), getattr(threaded, name), equal_nan=True)


def test_ensemble_arguments_are_checked():
    _, model, kernel, s0 = noisy_setup()
    cfg = SolverConfig(dt=1e-3, t_end=0.01)

    with pytest.raises(ValueError, match="n_paths"):
        run_ensemble(cfg, model, kernel, s0, n_paths=0)

    with pytest.raises(ValueError, match="workers"):
        run_ensemble(cfg, model, kernel, s0, n_paths=1, workers=0)


def test_stefan_front_short_run():
    assert stefan_front_error(n=100, dt=1e-3, t_end=0.05) <= 0.05


@pytest.mark.bench
def test_stefan_front_within_one_percent():
    # n=400, L=8, dt=1e-5 up to t=0.5.
    assert stefan_front_error() <= 0.01


@pytest.mark.bench
def test_strong_order_in_time():
    grid, model, kernel, s0 = noisy_setup(n=31, L=4.0)
    t_end = 0.1
    fine_steps = 512
    factors = (4, 8, 16)
    errors = {factor: [] for factor in factors}

    for seed in range(20):
        noise = sample_noise_path(kernel, t_end / fine_steps, fine_steps, np.random.default_rng(seed))
        reference = run_trajectory(SolverConfig(dt=t_end / fine_steps, t_end=t_end), model, kernel, s0, replay_noise=noise)

        for factor in factors:
            coarse = coarsen_noise(noise, factor)
            cfg = SolverConfig(dt=t_end * factor / fine_steps, t_end=t_end)
            trajectory = run_trajectory(cfg, model, kernel, s0, replay_noise=coarse)
            errors[factor].append(
                l2_norm_values(trajectory.final_state.u1.values - reference.final_state.u1.values, grid.h)
            )

    means = [float(np.mean(errors[factor])) for factor in factors]
    orders = [math.log(coarse / fine) / math.log(2.0) for fine, coarse in zip(means, means[1:])]

    assert min(orders) >= 0.4


@pytest.mark.bench
def test_global_regime_does_not_blow_up():
    grid = Grid1D.from_length(63, 8.0)
    model = build_model("affine_bounded", {"a": 0.5, "sigma": 0.5, "varrho": 1.0})
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    s0 = initial_state("bump", grid, amplitude=1.0, amplitude_minus=0.5)
    cfg = SolverConfig(dt=0.01, t_end=1.0, seed=2024, record_every=10)

    stats = run_ensemble(cfg, model, kernel, s0, n_paths=100, workers=4)

    assert stats.blowup_count == 0


@pytest.mark.bench
def test_blowup_follows_a_boundary_crossing():
    grid = Grid1D.from_length(63, 8.0)
    model = build_model("superlinear", {"kappa": 1.0, "sigma": 0.5})
    kernel = indicator_kernel(0.0, 1.0)
    s0 = initial_state("bump", grid, amplitude=5.0)
    cfg = SolverConfig(dt=1e-4, t_end=1.0, boundary_threshold=1e2, seed=7, record_every=100)

    blown = 0
    for index in range(100):
        trajectory = run_trajectory(dataclasses.replace(cfg, seed=cfg.seed + index), model, kernel, s0)
        status = trajectory.status

        if status.is_blowup:
            blown += 1
            assert status.boundary_flag
            assert status.t_circ <= status.t_blow

    assert blown >= 20
