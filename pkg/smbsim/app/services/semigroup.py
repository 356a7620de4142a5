from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.fft import dst, idst

from smbsim.app.services.grid_core import Grid1D, PhaseProfile


@dataclass(frozen=True, eq=False)
class SpectralLaplacian:
    """
    A = eta * Lap - c on the grid, diagonal in the type-I sine basis.

    Eigenvalues: -eta * (2 / h^2) * (1 - cos(k pi / (n + 1))) - c, k = 1..n.
    """

    grid: Grid1D
    eta: float = 1.0
    c: float = 1.0
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.eta <= 0.0:
            raise ValueError(f"Diffusivity must be positive, got eta={self.eta}.")

        if self.c < 0.0:
            raise ValueError(f"Spectrum shift must be non-negative, got c={self.c}.")

        n = self.grid.n
        h = self.grid.h
        modes = np.arange(1, n + 1, dtype=float)
        eigenvalues = -self.eta * (2.0 / (h * h)) * (1.0 - np.cos(modes * np.pi / (n + 1))) - self.c

        if not (eigenvalues < 0.0).all():
            raise ValueError("Spectrum must be strictly negative.")

        eigenvalues.flags.writeable = False
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def spectral_gap(self) -> float:
        return float(-self.eigenvalues[0])

    @property
    def delta(self) -> float:
        return self.c

    def forward(self, values: np.ndarray) -> np.ndarray:
        return dst(values, type=1, norm="ortho")

    def inverse(self, coefficients: np.ndarray) -> np.ndarray:
        return idst(coefficients, type=1, norm="ortho")

    def propagator(self, t: float) -> np.ndarray:
        return np.exp(t * self.eigenvalues)

    def resolvent_factors(self, dt: float) -> np.ndarray:
        # (1 - dt A)^{-1} in the sine basis.
        return 1.0 / (1.0 - dt * self.eigenvalues)

    def apply_factors(self, values: np.ndarray, factors: np.ndarray) -> np.ndarray:
        return self.inverse(factors * self.forward(values))

    def eigenvector(self, k: int) -> PhaseProfile:
        if not 1 <= k <= self.grid.n:
            raise ValueError(f"Mode index must be in 1..{self.grid.n}, got {k}.")

        return PhaseProfile(grid=self.grid, values=np.sin(k * np.pi * self.grid.nodes / self.grid.L))


def apply_semigroup(sl: SpectralLaplacian, p: PhaseProfile, t: float) -> PhaseProfile:
    if t < 0.0:
        raise ValueError(f"Semigroup time must be non-negative, got t={t}.")

    if t == 0.0:
        return PhaseProfile(grid=p.grid, values=p.values)

    return PhaseProfile(grid=p.grid, values=sl.apply_factors(p.values, sl.propagator(t)))


def apply_resolvent_step(sl: SpectralLaplacian, p: PhaseProfile, dt: float) -> PhaseProfile:
    if dt <= 0.0:
        raise ValueError(f"Step must be positive, got dt={dt}.")

    return PhaseProfile(grid=p.grid, values=sl.apply_factors(p.values, sl.resolvent_factors(dt)))


def resolvent_norm(sl: SpectralLaplacian, lam: float) -> float:
    """
    ||(lam - A)^{-1}|| = 1 / (lam + |lambda_1|) for self-adjoint A.
    """
    if lam < 0.0:
        raise ValueError(f"Resolvent parameter must be non-negative, got {lam}.")

    return 1.0 / (lam + sl.spectral_gap)


def _weights(sl: SpectralLaplacian, alpha: float) -> np.ndarray:
    return np.abs(sl.eigenvalues) ** (2.0 * alpha)


def fractional_norm(sl: SpectralLaplacian, p: PhaseProfile, alpha: float) -> float:
    """
    ||(-A)^alpha p|| in the discrete L2 norm.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}.")

    coefficients = sl.forward(p.values)
    return float(np.sqrt(sl.grid.h * np.dot(_weights(sl, alpha), coefficients**2)))


@dataclass(frozen=True)
class SmoothingReport:
    alpha: float
    beta: float
    empirical_constant: float
    operator_constant: float
    worst_t: float
    samples: int


def smoothing_estimate(
    sl: SpectralLaplacian,
    alpha: float,
    beta: float,
    t_grid: Sequence[float],
    samples: int = 16,
    rng: np.random.Generator | None = None,
    profiles: Sequence[PhaseProfile] | None = None,
) -> SmoothingReport:
    """
    Estimate K in ||S_t h||_alpha <= K t^-(alpha-beta) e^(-delta t) ||h||_beta.

    empirical_constant is the sup over the sample profiles (random white
    profiles unless given); operator_constant is the sup over eigenmodes,
    i.e. the operator norm bound on the grid. delta is c.
    """
    if not 0.0 <= beta < alpha <= 1.0:
        raise ValueError(f"Need 0 <= beta < alpha <= 1, got alpha={alpha}, beta={beta}.")

    times = np.asarray(t_grid, dtype=float)

    if times.size == 0 or (times <= 0.0).any():
        raise ValueError("t_grid must be a non-empty set of positive times.")

    gap = alpha - beta
    magnitudes = np.abs(sl.eigenvalues)
    time_factor = times**gap * np.exp(sl.delta * times)

    # (t, k) table of t^gap e^(delta t) |lambda_k|^gap e^(t lambda_k)
    modal = time_factor[:, None] * magnitudes[None, :] ** gap * np.exp(np.outer(times, sl.eigenvalues))
    operator_constant = float(modal.max())

    if profiles is None:
        generator = rng if rng is not None else np.random.default_rng(0)
        profiles = [
            PhaseProfile(grid=sl.grid, values=generator.standard_normal(sl.grid.n))
            for _ in range(samples)
        ]

    empirical = 0.0
    worst_t = float(times[0])
    alpha_weights = _weights(sl, alpha)
    beta_weights = _weights(sl, beta)

    for profile in profiles:
        coefficients2 = sl.forward(profile.values) ** 2
        denominator = np.sqrt(np.dot(beta_weights, coefficients2))

        if denominator == 0.0:
            continue

        decay = np.exp(2.0 * np.outer(times, sl.eigenvalues))
        numerator = np.sqrt(decay @ (alpha_weights * coefficients2))
        ratios = time_factor * numerator / denominator
        index = int(np.argmax(ratios))

        if ratios[index] > empirical:
            empirical = float(ratios[index])
            worst_t = float(times[index])

    return SmoothingReport(
        alpha=alpha,
        beta=beta,
        empirical_constant=empirical,
        operator_constant=operator_constant,
        worst_t=worst_t,
        samples=len(profiles),
    )
