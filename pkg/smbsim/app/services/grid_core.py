from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """
    Uniform grid on the truncated half-line [0, L].

    Interior nodes are x_j = j*h for j = 1..n. The boundary nodes x = 0 and
    x = L are not stored; they carry the Dirichlet value 0.
    """

    n: int
    h: float

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"Grid needs at least 2 interior nodes, got n={self.n}.")

        if not np.isfinite(self.h) or self.h <= 0.0:
            raise ValueError(f"Grid spacing must be positive, got h={self.h}.")

    @classmethod
    def from_length(cls, n: int, L: float) -> Grid1D:
        if L <= 0.0:
            raise ValueError(f"Truncation length must be positive, got L={L}.")

        return cls(n=n, h=L / (n + 1))

    @property
    def L(self) -> float:
        return (self.n + 1) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.h * np.arange(1, self.n + 1, dtype=float)
        nodes.flags.writeable = False
        return nodes


@dataclass(frozen=True, eq=False)
class PhaseProfile:
    """
    Interior node values of one phase. Extends by 0 at x = 0 and x = L.
    """

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)

        if values.shape != (self.grid.n,):
            raise ValueError(
                f"Profile needs {self.grid.n} interior values, got shape {values.shape}."
            )

        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid1D) -> PhaseProfile:
        return cls(grid=grid, values=np.zeros(grid.n))

    @classmethod
    def sample(cls, grid: Grid1D, function: Callable[[np.ndarray], np.ndarray]) -> PhaseProfile:
        return cls(grid=grid, values=np.broadcast_to(function(grid.nodes), (grid.n,)))

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


@dataclass(frozen=True, eq=False)
class SystemState:
    """
    Fixed-frame state X = (u1, u2, x*).

    u1 is the phase to the right of the front, u2 the phase to the left,
    stored on the reflected coordinate (distance from the front).
    """

    u1: PhaseProfile
    u2: PhaseProfile
    xstar: float

    def __post_init__(self) -> None:
        if self.u1.grid != self.u2.grid:
            raise ValueError("Both phases must share one grid.")

        object.__setattr__(self, "xstar", float(self.xstar))

    @classmethod
    def zeros(cls, grid: Grid1D, xstar: float = 0.0) -> SystemState:
        return cls(u1=PhaseProfile.zeros(grid), u2=PhaseProfile.zeros(grid), xstar=xstar)

    @classmethod
    def from_arrays(
        cls,
        grid: Grid1D,
        u1: np.ndarray,
        u2: np.ndarray,
        xstar: float,
    ) -> SystemState:
        return cls(
            u1=PhaseProfile(grid=grid, values=u1),
            u2=PhaseProfile(grid=grid, values=u2),
            xstar=xstar,
        )

    @property
    def grid(self) -> Grid1D:
        return self.u1.grid

    @property
    def is_valid(self) -> bool:
        return self.u1.is_finite and self.u2.is_finite and bool(np.isfinite(self.xstar))


@dataclass(frozen=True)
class BoundaryTrace:
    g1: float
    g2: float

    @property
    def max_abs(self) -> float:
        return max(abs(self.g1), abs(self.g2))


# Array-level stencils. The solver works on raw arrays; the profile
# functions below wrap them.


def _padded(values: np.ndarray) -> np.ndarray:
    padded = np.zeros(values.shape[0] + 2, dtype=float)
    padded[1:-1] = values
    return padded


def first_derivative_values(values: np.ndarray, h: float) -> np.ndarray:
    padded = _padded(values)
    return (padded[2:] - padded[:-2]) / (2.0 * h)


def second_derivative_values(values: np.ndarray, h: float) -> np.ndarray:
    padded = _padded(values)
    return (padded[:-2] - 2.0 * padded[1:-1] + padded[2:]) / (h * h)


def laplacian_columns(matrix: np.ndarray, h: float) -> np.ndarray:
    """
    Dirichlet Laplacian applied to every column of an (n, m) array.
    """
    padded = np.zeros((matrix.shape[0] + 2, matrix.shape[1]), dtype=float)
    padded[1:-1] = matrix
    return (padded[:-2] - 2.0 * padded[1:-1] + padded[2:]) / (h * h)


def trace_value(values: np.ndarray, h: float) -> float:
    return float((4.0 * values[0] - values[1]) / (2.0 * h))


def l2_norm_values(values: np.ndarray, h: float) -> float:
    # Trapezoid weights: h on interior nodes, boundary nodes carry 0.
    return float(np.sqrt(h * np.dot(values, values)))


def graph_norm_values(
    u1: np.ndarray,
    u2: np.ndarray,
    xstar: float,
    h: float,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    c: float = 1.0,
) -> float:
    identity_part = np.sqrt(h * (np.dot(u1, u1) + np.dot(u2, u2)) + xstar * xstar)

    a1 = eta_plus * second_derivative_values(u1, h) - c * u1
    a2 = eta_minus * second_derivative_values(u2, h) - c * u2
    operator_part = np.sqrt(h * (np.dot(a1, a1) + np.dot(a2, a2)) + (c * xstar) ** 2)

    return float(identity_part + operator_part)


def first_derivative(p: PhaseProfile) -> PhaseProfile:
    return PhaseProfile(grid=p.grid, values=first_derivative_values(p.values, p.grid.h))


def second_derivative(p: PhaseProfile) -> PhaseProfile:
    return PhaseProfile(grid=p.grid, values=second_derivative_values(p.values, p.grid.h))


def boundary_trace(s: SystemState) -> BoundaryTrace:
    """
    One-sided second-order gradient at x = 0 for both phases.
    """
    h = s.grid.h
    return BoundaryTrace(g1=trace_value(s.u1.values, h), g2=trace_value(s.u2.values, h))


def inner_product(p: PhaseProfile, q: PhaseProfile) -> float:
    return float(p.grid.h * np.dot(p.values, q.values))


def norm_sobolev(p: PhaseProfile, order: int) -> float:
    if order not in (0, 1, 2):
        raise ValueError(f"Sobolev order must be 0, 1 or 2, got {order}.")

    h = p.grid.h
    total = h * np.dot(p.values, p.values)

    if order >= 1:
        derivative = first_derivative_values(p.values, h)
        total += h * np.dot(derivative, derivative)

    if order == 2:
        curvature = second_derivative_values(p.values, h)
        total += h * np.dot(curvature, curvature)

    return float(np.sqrt(total))


def graph_norm(
    s: SystemState,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    c: float = 1.0,
) -> float:
    """
    ||s||_A = ||s|| + ||A s|| with A = (eta_plus*Lap - c, eta_minus*Lap - c, -c).
    """
    return graph_norm_values(
        s.u1.values,
        s.u2.values,
        s.xstar,
        s.grid.h,
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        c=c,
    )
