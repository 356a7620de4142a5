from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from smbsim.app.services.errors import ContractError, OutOfWindowError
from smbsim.app.services.frame_transform import (
    FullLineGrid,
    FullLineProfile,
    chain_rule_residual,
    front_dirichlet_defect,
    moving_frame_grid,
    reconstruct_moving_frame,
    shift,
    shift_derivative,
    to_fixed_frame,
    to_moving_frame,
)
from smbsim.app.services.grid_core import Grid1D, SystemState, boundary_trace
from smbsim.app.services.presets import build_kernel, build_model, initial_state
from smbsim.app.services.solver import SolverConfig, coarsen_noise, run_trajectory, sample_noise_path


def gaussian_profile(h: float = 0.05, size: int = 401, centre: float = 0.0) -> FullLineProfile:
    grid = FullLineGrid(x_min=-10.0, h=h, size=size)
    return FullLineProfile(grid=grid, values=np.exp(-0.5 * (grid.nodes - centre) ** 2))


def bump_state(n: int = 199, L: float = 8.0, xstar: float = 0.0) -> SystemState:
    grid = Grid1D.from_length(n, L)
    return initial_state("bump", grid, amplitude=1.0, amplitude_minus=0.5, xstar=xstar)


def test_full_line_grid_checks_size():
    with pytest.raises(ValueError, match="at least 4"):
        FullLineGrid(x_min=0.0, h=0.1, size=3)


def test_profiles_must_be_finite():
    grid = FullLineGrid(x_min=0.0, h=0.1, size=5)

    with pytest.raises(ValueError, match="finite"):
        FullLineProfile(grid=grid, values=np.array([0.0, np.nan, 0.0, 0.0, 0.0]))


def test_aligned_shifts_compose():
    p = gaussian_profile()
    h = p.grid.h

    composed = shift(shift(p, 7 * h), -3 * h)
    direct = shift(p, 4 * h)

    # Only values below the support tolerance fall off the window edges.
    assert np.allclose(composed.values, direct.values, rtol=0.0, atol=1e-15)
    assert np.allclose(shift(shift(p, 5 * h), -5 * h).values, p.values, rtol=0.0, atol=1e-15)


def test_aligned_shift_is_an_isometry():
    p = gaussian_profile()

    assert shift(p, 20 * p.grid.h).l2_norm() == pytest.approx(p.l2_norm(), rel=1e-12)
    assert shift(p, 0.0).l2_norm() == p.l2_norm()


def test_off_grid_shift_follows_the_profile():
    p = gaussian_profile()
    x = 0.37 * p.grid.h
    shifted = shift(p, x)

    assert np.max(np.abs(shifted.values - np.exp(-0.5 * (p.grid.nodes + x) ** 2))) < 1e-6


def test_shift_out_of_the_window_is_refused():
    p = gaussian_profile()

    with pytest.raises(OutOfWindowError, match="support"):
        shift(p, 5.0)


def test_shift_of_zero_profile_is_zero():
    grid = FullLineGrid(x_min=0.0, h=0.1, size=10)

    assert np.all(shift(FullLineProfile.zeros(grid), 100.0).values == 0.0)


def test_shift_is_differentiable():
    p = gaussian_profile(centre=-1.0)
    derivative = shift_derivative(p, 0.0)

    def ratio(epsilon: float) -> float:
        increment = shift(p, epsilon).values - p.values - epsilon * derivative.values
        return float(np.sqrt(p.grid.h * np.dot(increment, increment))) / epsilon

    coarse = ratio(0.013)
    fine = ratio(0.0065)

    assert fine < 0.7 * coarse
    assert np.max(np.abs(derivative.values + (p.grid.nodes + 1.0) * p.values)) < 1e-4


@pytest.mark.parametrize("xstar", [0.0, 0.8, 0.37])
def test_frame_round_trip(xstar):
    s = bump_state(xstar=xstar)
    target = moving_frame_grid(s.grid, [xstar])
    v = to_moving_frame(s, target)
    back = to_fixed_frame(v, xstar, s.grid)

    assert v.has_compact_support
    assert np.allclose(back.u1.values, s.u1.values, atol=1e-5)
    assert np.allclose(back.u2.values, s.u2.values, atol=1e-5)
    assert back.xstar == xstar


def test_aligned_round_trip_is_exact():
    s = bump_state(xstar=0.0)
    target = moving_frame_grid(s.grid, [0.0])
    back = to_fixed_frame(to_moving_frame(s, target), 0.0, s.grid)

    assert np.array_equal(back.u1.values, s.u1.values)
    assert np.array_equal(back.u2.values, s.u2.values)


def test_round_trip_keeps_the_kink_traces():
    s = bump_state(xstar=0.37)
    target = moving_frame_grid(s.grid, [0.37])
    back = to_fixed_frame(to_moving_frame(s, target), 0.37, s.grid)

    before = boundary_trace(s)
    after = boundary_trace(back)

    assert after.g1 == pytest.approx(before.g1, rel=1e-4)
    assert after.g2 == pytest.approx(before.g2, rel=1e-4)


def test_moving_frame_needs_coverage():
    s = bump_state(xstar=3.0)
    narrow = FullLineGrid(x_min=0.0, h=s.grid.h, size=50)

    with pytest.raises(OutOfWindowError, match="does not cover"):
        to_moving_frame(s, narrow)


def test_moving_frame_grid_covers_all_fronts():
    grid = Grid1D.from_length(31, 4.0)
    window = moving_frame_grid(grid, [-0.3, 0.0, 1.1])

    assert window.covers(-0.3 - grid.L, 1.1 + grid.L)
    assert window.h == grid.h
    assert window.x_min / grid.h == pytest.approx(round(window.x_min / grid.h))

    with pytest.raises(ValueError, match="Margin"):
        moving_frame_grid(grid, [0.0], margin_fraction=-0.1)


def noisy_run(dt: float = 1e-3, t_end: float = 0.02, varrho: float = 0.5, sigma: float = 0.5, **solver):
    grid = Grid1D.from_length(31, 4.0)
    model = build_model("stefan", {"varrho": varrho, "sigma": sigma})
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    s0 = initial_state("bump", grid, amplitude=1.0, amplitude_minus=0.5)
    cfg = SolverConfig(dt=dt, t_end=t_end, seed=3, record_noise=True, **solver)
    return model, kernel, run_trajectory(cfg, model, kernel, s0)


def test_reconstruction_follows_the_front():
    _, _, trajectory = noisy_run()
    mft = reconstruct_moving_frame(trajectory)

    assert len(mft.profiles) == len(trajectory.states)
    assert np.array_equal(mft.fronts, trajectory.fronts)
    assert all(profile.has_compact_support for profile in mft.profiles)
    assert front_dirichlet_defect(mft) <= trajectory.grid.h**2


def test_reconstruction_needs_states():
    _, _, trajectory = noisy_run()

    with pytest.raises(ContractError, match="keeping states"):
        reconstruct_moving_frame(dataclasses.replace(trajectory, states=()))


def test_zero_trajectory_has_zero_residual():
    grid = Grid1D.from_length(31, 4.0)
    model = build_model("stefan", {"varrho": 0.5, "sigma": 0.5})
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    cfg = SolverConfig(dt=1e-3, t_end=0.01, record_noise=True)
    trajectory = run_trajectory(cfg, model, kernel, SystemState.zeros(grid))

    assert chain_rule_residual(trajectory, model, kernel) == 0.0


def test_residual_halves_with_the_step():
    coarse_model, kernel, coarse = noisy_run(dt=2e-3, varrho=0.0, sigma=0.0)
    _, _, fine = noisy_run(dt=1e-3, varrho=0.0, sigma=0.0)

    ratio = chain_rule_residual(coarse, coarse_model, kernel) / chain_rule_residual(fine, coarse_model, kernel)

    assert 1.7 <= ratio <= 2.3


def test_residual_shrinks_on_a_shared_noise_path():
    model, kernel, _ = noisy_run(varrho=0.0)
    grid = Grid1D.from_length(31, 4.0)
    s0 = initial_state("bump", grid, amplitude=1.0, amplitude_minus=0.5)
    fine_noise = sample_noise_path(kernel, 5e-4, 40, np.random.default_rng(4))

    residuals = []
    for dt, noise in ((2e-3, coarsen_noise(fine_noise, 4)), (1e-3, coarsen_noise(fine_noise, 2))):
        cfg = SolverConfig(dt=dt, t_end=0.02, record_noise=True)
        trajectory = run_trajectory(cfg, model, kernel, s0, replay_noise=noise)
        residuals.append(chain_rule_residual(trajectory, model, kernel))

    assert residuals[1] < 0.8 * residuals[0]


def test_residual_contracts():
    model, kernel, trajectory = noisy_run()

    sparse = dataclasses.replace(
        trajectory,
        states=trajectory.states[::2],
        step_indices=trajectory.step_indices[::2],
    )
    with pytest.raises(ContractError, match="record_every"):
        chain_rule_residual(sparse, model, kernel)

    with pytest.raises(ContractError, match="noise increment"):
        chain_rule_residual(dataclasses.replace(trajectory, noise=None), model, kernel)

    blown = dataclasses.replace(trajectory, status=dataclasses.replace(trajectory.status, outcome="blowup"))
    with pytest.raises(ContractError, match="completed"):
        chain_rule_residual(blown, model, kernel)


def test_replayed_noise_can_stand_in_for_recorded_noise():
    model, kernel, trajectory = noisy_run()
    bare = dataclasses.replace(trajectory, noise=None)

    assert chain_rule_residual(bare, model, kernel, replayed_noise=trajectory.noise) == chain_rule_residual(
        trajectory, model, kernel
    )
