from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from smbsim.app.services.coefficients import ModelCoefficients, drift_values, sigma_values
from smbsim.app.services.errors import ContractError, OutOfWindowError
from smbsim.app.services.grid_core import (
    Grid1D,
    SystemState,
    first_derivative_values,
    second_derivative_values,
    trace_value,
)
from smbsim.app.services.noise import NoiseIncrement, NoiseKernel, diffusion_increment_values
from smbsim.app.services.solver import FixedFrameTrajectory


logger = logging.getLogger(__name__)

ALIGN_TOLERANCE = 1e-9
SUPPORT_TOLERANCE = 1e-8


@dataclass(frozen=True)
class FullLineGrid:
    """
    Uniform grid x_min + i*h, i = 0..size-1, on a window of the real line.
    """

    x_min: float
    h: float
    size: int

    def __post_init__(self) -> None:
        if self.h <= 0.0:
            raise ValueError(f"Grid spacing must be positive, got h={self.h}.")

        if self.size < 4:
            raise ValueError(f"Full-line grid needs at least 4 nodes, got {self.size}.")

    @property
    def x_max(self) -> float:
        return self.x_min + (self.size - 1) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.x_min + self.h * np.arange(self.size, dtype=float)
        nodes.flags.writeable = False
        return nodes

    def covers(self, low: float, high: float) -> bool:
        slack = ALIGN_TOLERANCE * self.h
        return self.x_min <= low + slack and self.x_max >= high - slack


@dataclass(frozen=True, eq=False)
class FullLineProfile:
    grid: FullLineGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)

        if values.shape != (self.grid.size,):
            raise ValueError(f"Profile needs {self.grid.size} values, got shape {values.shape}.")

        if not np.isfinite(values).all():
            raise ValueError("Full-line profile values must be finite.")

        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: FullLineGrid) -> FullLineProfile:
        return cls(grid=grid, values=np.zeros(grid.size))

    @property
    def has_compact_support(self) -> bool:
        return abs(self.values[0]) <= SUPPORT_TOLERANCE and abs(self.values[-1]) <= SUPPORT_TOLERANCE

    def l2_norm(self) -> float:
        return float(math.sqrt(self.grid.h * np.dot(self.values, self.values)))


def _aligned_offsets(positions: np.ndarray, h: float) -> np.ndarray | None:
    scaled = positions / h
    offsets = np.rint(scaled)

    if np.all(np.abs(scaled - offsets) <= ALIGN_TOLERANCE * np.maximum(1.0, np.abs(scaled))):
        return offsets.astype(int)

    return None


def _support(p: FullLineProfile) -> tuple[float, float] | None:
    inside = np.flatnonzero(np.abs(p.values) > SUPPORT_TOLERANCE)

    if inside.size == 0:
        return None

    nodes = p.grid.nodes
    return float(nodes[inside[0]]), float(nodes[inside[-1]])


def _check_shift_window(p: FullLineProfile, x: float) -> None:
    support = _support(p)

    if support is None:
        return

    low, high = support

    if not p.grid.covers(low - x, high - x):
        raise OutOfWindowError(
            f"Shift by {x:g} moves the support [{low:g}, {high:g}] out of "
            f"[{p.grid.x_min:g}, {p.grid.x_max:g}]."
        )


def _spline(p: FullLineProfile) -> CubicSpline:
    return CubicSpline(p.grid.nodes, p.values, bc_type="natural", extrapolate=False)


def shift(p: FullLineProfile, x: float) -> FullLineProfile:
    """
    theta_x p = p(x + .) on the same window.

    Shifts by a multiple of h move indices; other shifts go through a
    cubic spline. Values coming from outside the window are 0.
    """
    if x == 0.0:
        return FullLineProfile(grid=p.grid, values=p.values)

    _check_shift_window(p, x)
    grid = p.grid
    aligned = _aligned_offsets(np.array([x]), grid.h)

    if aligned is not None:
        offset = int(aligned[0])
        values = np.zeros(grid.size)

        if abs(offset) >= grid.size:
            return FullLineProfile(grid=grid, values=values)

        if offset >= 0:
            values[: grid.size - offset] = p.values[offset:]
        else:
            values[-offset:] = p.values[: grid.size + offset]

        return FullLineProfile(grid=grid, values=values)

    values = np.nan_to_num(_spline(p)(grid.nodes + x), nan=0.0)
    return FullLineProfile(grid=grid, values=values)


def shift_derivative(p: FullLineProfile, x: float) -> FullLineProfile:
    """
    theta_x p' with p' taken from the same spline that shift uses.
    """
    _check_shift_window(p, x)
    values = np.nan_to_num(_spline(p)(p.grid.nodes + x, 1), nan=0.0)
    return FullLineProfile(grid=p.grid, values=values)


def _phase_values(
    values: np.ndarray,
    grid: Grid1D,
    distance: np.ndarray,
    edge: float,
) -> np.ndarray:
    # One phase at distances 0 <= d <= L from the front, 0 beyond L.
    knots = np.concatenate(([0.0], grid.nodes, [grid.L]))
    data = np.concatenate(([edge], values, [0.0]))
    spline = CubicSpline(knots, data, bc_type="not-a-knot", extrapolate=False)
    return np.nan_to_num(spline(distance), nan=0.0)


def _paste_values(
    f1: np.ndarray,
    f2: np.ndarray,
    grid: Grid1D,
    relative: np.ndarray,
    edge1: float = 0.0,
    edge2: float = 0.0,
) -> np.ndarray:
    """
    f1 on r > 0 and f2(-r) on r < 0, evaluated at relative positions r.

    The value at r = 0 is the mean of the two edge values.
    """
    result = np.zeros(relative.size)
    offsets = _aligned_offsets(relative, grid.h)

    if offsets is not None:
        right = (offsets >= 1) & (offsets <= grid.n)
        left = (offsets <= -1) & (offsets >= -grid.n)
        result[right] = f1[offsets[right] - 1]
        result[left] = f2[-offsets[left] - 1]
        result[offsets == 0] = 0.5 * (edge1 + edge2)
        return result

    right = relative > 0.0
    left = relative < 0.0
    result[right] = _phase_values(f1, grid, relative[right], edge1)
    result[left] = _phase_values(f2, grid, -relative[left], edge2)
    result[relative == 0.0] = 0.5 * (edge1 + edge2)
    return result


def _require_coverage(target: FullLineGrid, xstar: float, L: float) -> None:
    if not target.covers(xstar - L, xstar + L):
        raise OutOfWindowError(
            f"Window [{target.x_min:g}, {target.x_max:g}] does not cover "
            f"[{xstar - L:g}, {xstar + L:g}] around the front."
        )


def to_moving_frame(s: SystemState, target: FullLineGrid) -> FullLineProfile:
    """
    Paste u1 right of the front and u2 mirrored left of it, then place the
    front at x* on the target window.
    """
    grid = s.grid
    _require_coverage(target, s.xstar, grid.L)

    relative = target.nodes - s.xstar
    values = _paste_values(s.u1.values, s.u2.values, grid, relative)
    return FullLineProfile(grid=target, values=values)


def _one_side(v: FullLineProfile, xstar: float, positions: np.ndarray, side: int) -> np.ndarray:
    nodes = v.grid.nodes
    tolerance = 1e-6 * v.grid.h

    if side > 0:
        keep = nodes > xstar + tolerance
        knots = np.concatenate(([xstar], nodes[keep]))
        data = np.concatenate(([0.0], v.values[keep]))
    else:
        keep = nodes < xstar - tolerance
        knots = np.concatenate((nodes[keep], [xstar]))
        data = np.concatenate((v.values[keep], [0.0]))

    if knots.size < 2:
        raise OutOfWindowError(f"No grid data on one side of the front at {xstar:g}.")

    spline = CubicSpline(knots, data, bc_type="not-a-knot", extrapolate=False)
    return np.nan_to_num(spline(positions), nan=0.0)


def to_fixed_frame(v: FullLineProfile, xstar: float, grid: Grid1D) -> SystemState:
    """
    u1(x_j) = v(x* + x_j), u2(x_j) = v(x* - x_j).

    Each side is interpolated separately with the Dirichlet value at the
    front as a knot, so a kink at x* is kept.
    """
    _require_coverage(v.grid, xstar, grid.L)

    right = xstar + grid.nodes
    left = xstar - grid.nodes

    right_offsets = _aligned_offsets(right - v.grid.x_min, v.grid.h)
    left_offsets = _aligned_offsets(left - v.grid.x_min, v.grid.h)

    if right_offsets is not None and left_offsets is not None:
        return SystemState.from_arrays(grid, v.values[right_offsets], v.values[left_offsets], xstar)

    u1 = _one_side(v, xstar, right, side=1)
    u2 = _one_side(v, xstar, left, side=-1)
    return SystemState.from_arrays(grid, u1, u2, xstar)


def moving_frame_grid(
    grid: Grid1D,
    fronts: Sequence[float],
    margin_fraction: float = 0.25,
) -> FullLineGrid:
    """
    Window with spacing h covering [x* - L, x* + L] for every front, plus a
    margin of margin_fraction * L on each side. Nodes sit on multiples of h.
    """
    if margin_fraction < 0.0:
        raise ValueError(f"Margin fraction must be non-negative, got {margin_fraction}.")

    fronts = np.asarray(fronts, dtype=float)
    margin = margin_fraction * grid.L
    low = float(fronts.min()) - grid.L - margin
    high = float(fronts.max()) + grid.L + margin

    x_min = grid.h * math.floor(low / grid.h)
    size = int(math.ceil((high - x_min) / grid.h)) + 1
    return FullLineGrid(x_min=x_min, h=grid.h, size=size)


@dataclass(frozen=True, eq=False)
class MovingFrameTrajectory:
    grid: FullLineGrid
    times: np.ndarray
    fronts: np.ndarray
    traces: np.ndarray
    profiles: tuple[FullLineProfile, ...]


def reconstruct_moving_frame(
    fixed: FixedFrameTrajectory,
    target: FullLineGrid | None = None,
) -> MovingFrameTrajectory:
    if not fixed.states:
        raise ContractError("Trajectory was run without keeping states.")

    fronts = np.array([state.xstar for state in fixed.states])
    target = target or moving_frame_grid(fixed.grid, fronts)

    return MovingFrameTrajectory(
        grid=target,
        times=np.array(fixed.times[: len(fixed.states)]),
        fronts=fronts,
        traces=np.array(fixed.traces[: len(fixed.states)]),
        profiles=tuple(to_moving_frame(state, target) for state in fixed.states),
    )


def front_dirichlet_defect(mft: MovingFrameTrajectory) -> float:
    """
    Max over records of |v| at the node nearest the front, after removing
    the linear part predicted by the one-sided gradient on that side.
    """
    nodes = mft.grid.nodes
    defect = 0.0

    for index, profile in enumerate(mft.profiles):
        front = mft.fronts[index]
        nearest = int(np.argmin(np.abs(nodes - front)))
        distance = nodes[nearest] - front
        g1, g2 = mft.traces[index]
        slope_part = g1 * distance if distance >= 0.0 else -g2 * distance
        defect = max(defect, abs(profile.values[nearest] - slope_part))

    return float(defect)


def _edge(values: np.ndarray) -> float:
    # Quadratic extrapolation to the front.
    return float(3.0 * values[0] - 3.0 * values[1] + values[2])


def chain_rule_residual(
    fixed: FixedFrameTrajectory,
    mc: ModelCoefficients,
    k: NoiseKernel,
    replayed_noise: Sequence[NoiseIncrement] | None = None,
) -> float:
    """
    Discrete L2 norm of

        v_T - v_0 - sum_i [dt*theta(Au + B) - dt*x'_i*theta(u') + theta(C(u)dW_i)]

    with v = theta_{-x*} u on a common moving-frame window. Everything is
    frozen at the left endpoint of each step; x'_i is the recorded rate.
    """
    if fixed.status.is_blowup:
        raise ContractError("Chain-rule residual needs a completed trajectory.")

    n_steps = fixed.step_indices.size - 1

    if len(fixed.states) != n_steps + 1 or not np.array_equal(fixed.step_indices, np.arange(n_steps + 1)):
        raise ContractError("Chain-rule residual needs the state at every step (record_every = 1).")

    noise = replayed_noise if replayed_noise is not None else fixed.noise

    if noise is None or len(noise) < n_steps:
        raise ContractError("Chain-rule residual needs the noise increment of every step.")

    grid = fixed.grid
    h = grid.h
    dt = fixed.dt
    target = moving_frame_grid(grid, fixed.fronts)

    if fixed.front_rates is not None:
        rates = fixed.front_rates
    else:
        rates = np.array([mc.rho(*fixed.traces[i]) for i in range(n_steps)], dtype=float)

    total = np.zeros(target.size)

    for index in range(n_steps):
        state = fixed.states[index]
        u1 = state.u1.values
        u2 = state.u2.values
        xstar = state.xstar
        relative = target.nodes - xstar

        g1 = trace_value(u1, h)
        g2 = trace_value(u2, h)
        drift1, drift2, _, _ = drift_values(mc, grid, u1, u2, xstar, g1, g2)
        sigma1, sigma2 = sigma_values(mc, grid, u1, u2)
        noise1, noise2 = diffusion_increment_values(k, grid, xstar, sigma1, sigma2, np.asarray(noise[index].w))

        generator1 = mc.eta_plus * second_derivative_values(u1, h) - mc.c * u1 + drift1
        generator2 = mc.eta_minus * second_derivative_values(u2, h) - mc.c * u2 + drift2
        slope1 = first_derivative_values(u1, h)
        slope2 = -first_derivative_values(u2, h)

        total += dt * _paste_values(generator1, generator2, grid, relative, _edge(generator1), _edge(generator2))
        total -= dt * rates[index] * _paste_values(slope1, slope2, grid, relative, _edge(slope1), _edge(slope2))
        total += _paste_values(noise1, noise2, grid, relative, _edge(noise1), _edge(noise2))

    start = to_moving_frame(fixed.states[0], target).values
    end = to_moving_frame(fixed.states[-1], target).values
    residual = end - start - total

    value = float(math.sqrt(target.h * np.dot(residual, residual)))
    logger.debug("Chain-rule residual %g over %d steps.", value, n_steps)
    return value
