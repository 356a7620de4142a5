from __future__ import annotations

import math

import numpy as np
import pytest

from smbsim.app.services.grid_core import Grid1D, PhaseProfile, SystemState, graph_norm_values
from smbsim.app.services.noise import (
    HS_LEIBNIZ_CONSTANT,
    NoiseIncrement,
    apply_kernel,
    check_kernel,
    covariance,
    hs_norm_bound,
    hs_norm_direct,
    hs_sample_points,
    kernel_slice_sup,
    sample_diffusion_increment,
    sample_noise_increment,
)
from smbsim.app.services.presets import build_kernel, gaussian_kernel, indicator_kernel


def random_sigma(grid: Grid1D, rng: np.random.Generator) -> tuple[PhaseProfile, PhaseProfile]:
    envelope = np.sin(np.pi * grid.nodes / grid.L)
    return (
        PhaseProfile(grid=grid, values=rng.standard_normal(grid.n) * envelope),
        PhaseProfile(grid=grid, values=rng.standard_normal(grid.n) * envelope),
    )


def test_increment_variance_matches_dt_over_dy():
    kernel = gaussian_kernel(0.5, -2.0, 2.0, m_y=20)
    rng = np.random.default_rng(3)
    samples = np.array([sample_noise_increment(kernel, 0.01, rng).w for _ in range(4000)])

    assert samples.var() == pytest.approx(0.01 / kernel.dy, rel=0.05)


def test_zero_increment_gives_zero_field():
    kernel = gaussian_kernel(0.5, -2.0, 2.0)
    field = apply_kernel(kernel, NoiseIncrement.zeros(kernel, 0.1), np.linspace(-1.0, 1.0, 7))

    assert np.all(field == 0.0)


def test_increment_size_is_checked():
    kernel = gaussian_kernel(0.5, -2.0, 2.0, m_y=10)

    with pytest.raises(ValueError, match="cells"):
        apply_kernel(kernel, NoiseIncrement(w=np.zeros(11), dt=0.1), np.zeros(3))


def test_increment_addition_sums_time():
    a = NoiseIncrement(w=np.ones(3), dt=0.1)
    b = NoiseIncrement(w=2.0 * np.ones(3), dt=0.2)
    total = a + b

    assert total.dt == pytest.approx(0.3)
    assert np.all(total.w == 3.0)


def test_indicator_kernel_is_constant_in_x():
    kernel = indicator_kernel(0.0, 1.0, m_y=8)
    w = np.random.default_rng(0).normal(size=8)
    field = apply_kernel(kernel, NoiseIncrement(w=w, dt=0.1), np.array([-3.0, 0.0, 5.0]))

    assert np.all(field == field[0])
    assert field[0] == pytest.approx(kernel.dy * w.sum())


def test_gaussian_covariance_matches_closed_form():
    # Convolution of two normal densities of width w has width sqrt(2) w.
    width = 0.5
    kernel = gaussian_kernel(width, -8.0, 8.0, m_y=640)

    for x, y in [(0.0, 0.0), (0.0, 0.3), (-0.5, 0.5)]:
        s = np.sqrt(2.0) * width
        expected = np.exp(-0.5 * (x - y) ** 2 / s**2) / (np.sqrt(2.0 * np.pi) * s)
        assert covariance(kernel, x, y) == pytest.approx(expected, rel=1e-6)


def test_sigma_zero_gives_zero_diffusion():
    grid = Grid1D.from_length(15, 4.0)
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    s = SystemState.zeros(grid)
    zero = (PhaseProfile.zeros(grid), PhaseProfile.zeros(grid))
    increment = sample_noise_increment(kernel, 0.1, np.random.default_rng(0))

    n1, n2 = sample_diffusion_increment(kernel, s, zero, increment)

    assert np.all(n1.values == 0.0)
    assert np.all(n2.values == 0.0)


def test_hs_norm_vanishes_with_sigma():
    grid = Grid1D.from_length(15, 4.0)
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    zero = (PhaseProfile.zeros(grid), PhaseProfile.zeros(grid))

    assert hs_norm_direct(kernel, zero, 0.0) == 0.0
    assert hs_norm_bound(kernel, zero, 0.0) == 0.0


@pytest.mark.parametrize("kernel_name", ["gaussian", "indicator"])
def test_hs_direct_below_bound(kernel_name):
    rng = np.random.default_rng(5)
    grid = Grid1D.from_length(31, 4.0)
    kernel = build_kernel(kernel_name, grid, 0.0, width=0.5, a=0.0, b=1.0)

    for _ in range(10):
        xstar = float(rng.uniform(-0.5, 0.5))
        eta_plus, eta_minus, c = rng.uniform(0.5, 2.0, size=3)
        sigma_vals = random_sigma(grid, rng)
        direct = hs_norm_direct(kernel, sigma_vals, xstar, eta_plus, eta_minus, c)
        bound = hs_norm_bound(kernel, sigma_vals, xstar, eta_plus, eta_minus, c)

        assert direct <= bound


@pytest.mark.bench
def test_hs_inequality_on_fifty_states_two_kernels():
    rng = np.random.default_rng(17)
    grid = Grid1D.from_length(63, 8.0)
    kernels = [build_kernel("gaussian", grid, 0.0, width=0.5), indicator_kernel(0.0, 1.0)]
    violations = 0

    for kernel in kernels:
        for _ in range(50):
            xstar = float(rng.uniform(-1.0, 1.0))
            sigma_vals = random_sigma(grid, rng)
            direct = hs_norm_direct(kernel, sigma_vals, xstar)
            bound = hs_norm_bound(kernel, sigma_vals, xstar, sample_points=hs_sample_points(grid, xstar))
            violations += direct > bound

    assert violations == 0


def test_sample_points_cover_the_stencil():
    grid = Grid1D.from_length(4, 1.0)
    points = hs_sample_points(grid, 0.3)

    assert points.min() == pytest.approx(0.3 - grid.L)
    assert points.max() == pytest.approx(0.3 + grid.L)
    assert points.size == 2 * (2 * (grid.n + 1)) + 1


def test_check_kernel_reports_finite_slices():
    kernel = gaussian_kernel(0.5, -3.0, 3.0)
    report = check_kernel(kernel, np.linspace(-1.0, 1.0, 11))

    assert report.is_valid
    assert [check.order for check in report.checks] == [0, 1, 2, 3]


def test_check_kernel_flags_non_finite_slices():
    kernel = gaussian_kernel(0.5, -3.0, 3.0)
    broken = type(kernel)(
        zeta=kernel.zeta,
        zeta_dx=(kernel.zeta_dx[0], lambda x, y: np.full(np.broadcast_shapes(np.shape(x), np.shape(y)), np.inf), kernel.zeta_dx[2]),
        y_min=kernel.y_min,
        y_max=kernel.y_max,
        m_y=kernel.m_y,
    )

    report = check_kernel(broken, np.zeros(3))

    assert not report.is_valid
    assert not report.checks[2].finite


def test_gaussian_covariance_is_shift_invariant():
    kernel = gaussian_kernel(0.5, -8.0, 8.0, m_y=640)

    for x, y in [(0.0, 0.0), (0.1, -0.4), (-0.7, 0.2)]:
        reference = covariance(kernel, x, y)

        for shift in (0.013, -0.25, 0.9):
            assert covariance(kernel, x + shift, y + shift) == pytest.approx(reference, abs=1e-8)


def test_moving_the_front_translates_the_noise():
    # Moving x* by m cells of y equals shifting the increment by m cells.
    grid = Grid1D.from_length(31, 4.0)
    kernel = gaussian_kernel(0.5, -12.0, 12.0, m_y=480)
    rng = np.random.default_rng(9)
    sigma_vals = random_sigma(grid, rng)
    w = sample_noise_increment(kernel, 0.01, rng)
    cells = 6

    shifted = SystemState(u1=PhaseProfile.zeros(grid), u2=PhaseProfile.zeros(grid), xstar=0.1 + cells * kernel.dy)
    base = SystemState(u1=PhaseProfile.zeros(grid), u2=PhaseProfile.zeros(grid), xstar=0.1)
    rolled = NoiseIncrement(w=np.roll(w.w, -cells), dt=w.dt)

    moved1, moved2 = sample_diffusion_increment(kernel, shifted, sigma_vals, w)
    base1, base2 = sample_diffusion_increment(kernel, base, sigma_vals, rolled)

    assert np.allclose(moved1.values, base1.values, rtol=0.0, atol=1e-10)
    assert np.allclose(moved2.values, base2.values, rtol=0.0, atol=1e-10)


@pytest.mark.parametrize("width", [0.3, 0.5, 1.0])
def test_kernel_field_is_lipschitz_with_the_slice_constant(width):
    kernel = gaussian_kernel(width, -6.0, 6.0, m_y=240)
    points = np.linspace(-2.0, 2.0, 2001)
    lipschitz = check_kernel(kernel, points).checks[1].sup_norm
    rng = np.random.default_rng(21)

    for _ in range(20):
        w = sample_noise_increment(kernel, 0.05, rng)
        field = apply_kernel(kernel, w, points)
        quotient = np.max(np.abs(np.diff(field)) / np.diff(points))
        w_norm = np.sqrt(kernel.dy * np.dot(w.w, w.w))

        assert quotient <= lipschitz * w_norm * (1.0 + 1e-3)


def column_graph_norms(kernel, sigma_vals, xstar, cells, eta_plus=1.0, eta_minus=1.0, c=1.0):
    grid = sigma_vals[0].grid
    norms = []

    for cell in cells:
        y = kernel.y_nodes[cell]
        column1 = sigma_vals[0].values * kernel.zeta(xstar + grid.nodes, y) * np.sqrt(kernel.dy)
        column2 = sigma_vals[1].values * kernel.zeta(xstar - grid.nodes, y) * np.sqrt(kernel.dy)
        norms.append(graph_norm_values(column1, column2, 0.0, grid.h, eta_plus, eta_minus, c))

    return norms


@pytest.mark.parametrize("kernel_name", ["gaussian", "indicator"])
def test_hs_norm_is_independent_of_summation_order(kernel_name):
    rng = np.random.default_rng(4)
    grid = Grid1D.from_length(31, 4.0)
    kernel = build_kernel(kernel_name, grid, 0.0, width=0.5, a=0.0, b=1.0)
    sigma_vals = random_sigma(grid, rng)
    xstar, eta_plus, eta_minus, c = 0.2, 1.5, 0.7, 0.5

    forward = column_graph_norms(kernel, sigma_vals, xstar, range(kernel.m_y), eta_plus, eta_minus, c)
    backward = column_graph_norms(kernel, sigma_vals, xstar, reversed(range(kernel.m_y)), eta_plus, eta_minus, c)
    direct = hs_norm_direct(kernel, sigma_vals, xstar, eta_plus, eta_minus, c)

    assert math.sqrt(sum(norm**2 for norm in forward)) == pytest.approx(direct, rel=1e-12)
    assert math.sqrt(math.fsum(norm**2 for norm in backward)) == pytest.approx(direct, rel=1e-12)


def test_hs_norm_of_a_single_cell_is_one_column():
    grid = Grid1D.from_length(31, 4.0)
    kernel = gaussian_kernel(0.5, -1.0, 1.0, m_y=1)
    sigma_vals = random_sigma(grid, np.random.default_rng(2))

    (column,) = column_graph_norms(kernel, sigma_vals, 0.3, [0])

    assert hs_norm_direct(kernel, sigma_vals, 0.3) == pytest.approx(column, rel=1e-12)


@pytest.mark.parametrize("kernel_name", ["gaussian", "indicator"])
def test_hs_bound_uses_leibniz_constant_two(kernel_name):
    grid = Grid1D.from_length(63, 4.0)
    kernel = build_kernel(kernel_name, grid, 0.0, width=0.5, a=0.0, b=1.0)
    # sigma(x, y) = y evaluated on a sine eigenvector.
    mode = np.sin(np.pi * grid.nodes / grid.L)
    sigma_vals = (PhaseProfile(grid=grid, values=mode), PhaseProfile.zeros(grid))
    points = hs_sample_points(grid, 0.0)

    bound = hs_norm_bound(kernel, sigma_vals, 0.0)
    sigma_norm = graph_norm_values(mode, np.zeros(grid.n), 0.0, grid.h)

    assert HS_LEIBNIZ_CONSTANT == 2.0
    assert bound == pytest.approx(2.0 * sigma_norm * kernel_slice_sup(kernel, points), rel=1e-12)
    assert hs_norm_direct(kernel, sigma_vals, 0.0) <= bound
    assert hs_norm_bound(kernel, sigma_vals, 0.0, leibniz_constant=1.0) == pytest.approx(0.5 * bound, rel=1e-12)


def test_hs_bound_scales_with_the_largest_diffusivity():
    grid = Grid1D.from_length(31, 4.0)
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)
    sigma_vals = random_sigma(grid, np.random.default_rng(8))
    points = hs_sample_points(grid, 0.0)

    bound = hs_norm_bound(kernel, sigma_vals, 0.0, eta_plus=3.0, eta_minus=0.5)
    sigma_norm = graph_norm_values(sigma_vals[0].values, sigma_vals[1].values, 0.0, grid.h, 3.0, 0.5)

    assert bound == pytest.approx(2.0 * 3.0 * sigma_norm * kernel_slice_sup(kernel, points), rel=1e-12)
    assert hs_norm_direct(kernel, sigma_vals, 0.0, eta_plus=3.0, eta_minus=0.5) <= bound


def test_hs_bound_rejects_a_non_positive_constant():
    grid = Grid1D.from_length(15, 4.0)
    kernel = build_kernel("gaussian", grid, 0.0, width=0.5)

    with pytest.raises(ValueError, match="Leibniz constant"):
        hs_norm_bound(kernel, random_sigma(grid, np.random.default_rng(0)), leibniz_constant=0.0)
