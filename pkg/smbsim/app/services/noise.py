from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from smbsim.app.services.grid_core import (
    Grid1D,
    PhaseProfile,
    SystemState,
    graph_norm_values,
    laplacian_columns,
)


logger = logging.getLogger(__name__)

KernelFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

HS_LEIBNIZ_CONSTANT = 2.0


@dataclass(frozen=True, eq=False)
class NoiseKernel:
    """
    Integral kernel zeta(x, y) of the smoothing operator T_zeta.

    zeta_dx holds the first three x-derivatives. The y-integral runs over
    [y_min, y_max] with m_y midpoint cells.
    """

    zeta: KernelFunction
    zeta_dx: tuple[KernelFunction, KernelFunction, KernelFunction]
    y_min: float
    y_max: float
    m_y: int
    name: str = "custom"
    x_independent: bool = False

    def __post_init__(self) -> None:
        if self.m_y < 1:
            raise ValueError(f"m_y must be positive, got {self.m_y}.")

        if not self.y_max > self.y_min:
            raise ValueError(f"Empty quadrature window [{self.y_min}, {self.y_max}].")

        if len(self.zeta_dx) != 3:
            raise ValueError("zeta_dx needs the first three x-derivatives.")

    @property
    def y_support(self) -> tuple[float, float]:
        return (self.y_min, self.y_max)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.m_y

    @cached_property
    def y_nodes(self) -> np.ndarray:
        nodes = self.y_min + self.dy * (np.arange(self.m_y, dtype=float) + 0.5)
        nodes.flags.writeable = False
        return nodes

    def derivative(self, order: int) -> KernelFunction:
        if order == 0:
            return self.zeta

        if order in (1, 2, 3):
            return self.zeta_dx[order - 1]

        raise ValueError(f"Kernel derivative order must be 0..3, got {order}.")

    def matrix(self, eval_points: np.ndarray, order: int = 0) -> np.ndarray:
        """
        zeta^(order)(x_i, y_k) for every eval point and y cell.
        """
        points = np.asarray(eval_points, dtype=float).reshape(-1)
        function = self.derivative(order)
        values = function(points[:, None], self.y_nodes[None, :])
        return np.broadcast_to(np.asarray(values, dtype=float), (points.size, self.m_y))

    def slice_norms(self, eval_points: np.ndarray, order: int = 0) -> np.ndarray:
        """
        ||zeta^(order)(x, .)||_L2 by midpoint quadrature, one value per point.
        """
        values = self.matrix(eval_points, order)
        return np.sqrt(self.dy * np.einsum("ik,ik->i", values, values))


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    """
    Cylindrical Wiener increment over one step, one entry per y cell.

    Entries are N(0, dt/dy).
    """

    w: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float).reshape(-1)
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

        if self.dt <= 0.0:
            raise ValueError(f"Increment step must be positive, got dt={self.dt}.")

    @classmethod
    def zeros(cls, k: NoiseKernel, dt: float) -> NoiseIncrement:
        return cls(w=np.zeros(k.m_y), dt=dt)

    def __add__(self, other: NoiseIncrement) -> NoiseIncrement:
        return NoiseIncrement(w=self.w + other.w, dt=self.dt + other.dt)


def increment_scale(k: NoiseKernel, dt: float) -> float:
    return float(np.sqrt(dt / k.dy))


def sample_noise_increment(k: NoiseKernel, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    return NoiseIncrement(w=rng.normal(0.0, increment_scale(k, dt), size=k.m_y), dt=dt)


def apply_kernel_values(k: NoiseKernel, w: np.ndarray, eval_points: np.ndarray) -> np.ndarray:
    points = np.asarray(eval_points, dtype=float).reshape(-1)

    if k.x_independent:
        row = k.matrix(np.zeros(1))[0]
        return np.full(points.size, k.dy * float(np.dot(row, w)))

    return k.dy * (k.matrix(points) @ w)


def apply_kernel(k: NoiseKernel, w: NoiseIncrement, eval_points: np.ndarray) -> np.ndarray:
    """
    Midpoint quadrature of T_zeta w at every eval point.
    """
    if w.w.shape != (k.m_y,):
        raise ValueError(f"Increment has {w.w.size} cells, kernel has {k.m_y}.")

    return apply_kernel_values(k, w.w, eval_points)


def diffusion_increment_values(
    k: NoiseKernel,
    grid: Grid1D,
    xstar: float,
    sigma1: np.ndarray,
    sigma2: np.ndarray,
    w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    nodes = grid.nodes

    if np.any(sigma1):
        increment1 = sigma1 * apply_kernel_values(k, w, xstar + nodes)
    else:
        increment1 = np.zeros(grid.n)

    if np.any(sigma2):
        increment2 = sigma2 * apply_kernel_values(k, w, xstar - nodes)
    else:
        increment2 = np.zeros(grid.n)

    return increment1, increment2


def sample_diffusion_increment(
    k: NoiseKernel,
    s: SystemState,
    sigma_vals: tuple[PhaseProfile, PhaseProfile],
    w: NoiseIncrement,
) -> tuple[PhaseProfile, PhaseProfile]:
    """
    C(u)w per phase: sigma values times T_zeta w at x* + x_j and x* - x_j.

    The front gets no direct noise.
    """
    increment1, increment2 = diffusion_increment_values(
        k,
        s.grid,
        s.xstar,
        sigma_vals[0].values,
        sigma_vals[1].values,
        w.w,
    )

    return (
        PhaseProfile(grid=s.grid, values=increment1),
        PhaseProfile(grid=s.grid, values=increment2),
    )


def covariance(k: NoiseKernel, x: float, y: float) -> float:
    row_x = k.matrix(np.array([x]))[0]
    row_y = k.matrix(np.array([y]))[0]
    return float(k.dy * np.dot(row_x, row_y))


def _columns(k: NoiseKernel, sigma: np.ndarray, points: np.ndarray) -> np.ndarray:
    # C(u)e_k for the cell basis e_k = indicator / sqrt(dy).
    return sigma[:, None] * k.matrix(points) * np.sqrt(k.dy)


def hs_norm_direct(
    k: NoiseKernel,
    sigma_vals: tuple[PhaseProfile, PhaseProfile],
    xstar: float,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    c: float = 1.0,
) -> float:
    """
    sqrt(sum_k ||C(u) e_k||_A^2) over the discrete y-basis.
    """
    grid = sigma_vals[0].grid
    h = grid.h
    nodes = grid.nodes

    columns1 = _columns(k, sigma_vals[0].values, xstar + nodes)
    columns2 = _columns(k, sigma_vals[1].values, xstar - nodes)

    identity_part = np.sqrt(h * (np.sum(columns1**2, axis=0) + np.sum(columns2**2, axis=0)))

    operator1 = eta_plus * laplacian_columns(columns1, h) - c * columns1
    operator2 = eta_minus * laplacian_columns(columns2, h) - c * columns2
    operator_part = np.sqrt(h * (np.sum(operator1**2, axis=0) + np.sum(operator2**2, axis=0)))

    column_norms = identity_part + operator_part
    return float(np.sqrt(np.dot(column_norms, column_norms)))


def hs_sample_points(grid: Grid1D, xstar: float) -> np.ndarray:
    # Every stencil point x* +- j*h/2, j = 0..2(n+1), covers the ghosts and midpoints.
    offsets = 0.5 * grid.h * np.arange(0, 2 * (grid.n + 1) + 1, dtype=float)
    return np.concatenate((xstar + offsets, xstar - offsets[1:]))


def kernel_slice_sup(k: NoiseKernel, sample_points: np.ndarray, orders: Sequence[int] = (0, 1, 2)) -> float:
    """
    sup over sample points of sum_i ||zeta^(i)(x, .)||_L2.
    """
    total = np.zeros(np.asarray(sample_points).size)

    for order in orders:
        total += k.slice_norms(sample_points, order)

    return float(total.max()) if total.size else 0.0


def hs_norm_bound(
    k: NoiseKernel,
    sigma_vals: tuple[PhaseProfile, PhaseProfile],
    xstar: float = 0.0,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    c: float = 1.0,
    sample_points: np.ndarray | None = None,
    leibniz_constant: float = HS_LEIBNIZ_CONSTANT,
) -> float:
    """
    K * max(1, eta) * ||N_sigma(u)||_A * sup_x sum_{i<=2} ||zeta^(i)(x, .)||.

    K is the Leibniz constant. max(1, eta) is 1 for the plain Laplacian and
    carries the diffusivity into the zeta'' term otherwise.
    """
    if leibniz_constant <= 0.0:
        raise ValueError(f"Leibniz constant must be positive, got {leibniz_constant}.")

    grid = sigma_vals[0].grid

    if sample_points is None:
        sample_points = hs_sample_points(grid, xstar)

    sigma_norm = graph_norm_values(
        sigma_vals[0].values,
        sigma_vals[1].values,
        0.0,
        grid.h,
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        c=c,
    )

    if sigma_norm == 0.0:
        return 0.0

    scale = max(1.0, eta_plus, eta_minus)
    return leibniz_constant * scale * sigma_norm * kernel_slice_sup(k, sample_points)


@dataclass(frozen=True)
class KernelCheck:
    order: int
    sup_norm: float
    finite: bool


@dataclass(frozen=True)
class KernelReport:
    name: str
    checks: list[KernelCheck] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return all(check.finite for check in self.checks)


def check_kernel(k: NoiseKernel, sample_points: np.ndarray) -> KernelReport:
    """
    Square-integrability of the y-slices of zeta and its three derivatives.

    The third derivative is sampled and reported but never enters a bound.
    """
    checks: list[KernelCheck] = []

    for order in range(4):
        norms = k.slice_norms(sample_points, order)
        finite = bool(np.isfinite(norms).all())
        sup_norm = float(norms.max()) if finite and norms.size else float("inf")
        checks.append(KernelCheck(order=order, sup_norm=sup_norm, finite=finite))

        if not finite:
            logger.warning("Kernel %s: order-%d slices are not square-integrable.", k.name, order)

    return KernelReport(name=k.name, checks=checks)
