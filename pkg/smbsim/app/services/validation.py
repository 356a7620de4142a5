from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.fft import dst, idst
from scipy.optimize import bisect
from scipy.special import erfcx

from smbsim.app.services.errors import RootNotFoundError
from smbsim.app.services.grid_core import Grid1D, PhaseProfile, SystemState
from smbsim.app.services.noise import NoiseKernel, covariance, increment_scale


# One-phase similarity solution.
#
# Ansatz: v(t, x) = A * (erfc((x - x0) / (2 sqrt(eta t))) / erfc(lam) - 1) right
# of the front x*(t) = x0 + 2 lam sqrt(eta t), with v(t, x*) = 0 and v -> -A far
# away. The left phase is absent. The one-sided gradient at the front is
#   g1 = -A / (erfcx(lam) sqrt(pi eta t)),
# and the front law x*' = varrho * (g2 - g1) with g2 = 0 gives
#   lam * sqrt(pi) * erfcx(lam) = St,   St = varrho * A / eta.
# The left side increases from 0 to 1, so a root exists iff 0 < St < 1.

LAMBDA_BRACKET = (1e-8, 10.0)


def stefan_number(eta: float, varrho: float, amplitude: float) -> float:
    return varrho * amplitude / eta


def stefan_residual(lam: float, st: float) -> float:
    return float(lam * math.sqrt(math.pi) * erfcx(lam) - st)


def stefan_lambda(eta: float, varrho: float, amplitude: float) -> float:
    if min(eta, varrho, amplitude) <= 0.0:
        raise ValueError(
            f"eta, varrho and amplitude must be positive, got {eta}, {varrho}, {amplitude}."
        )

    st = stefan_number(eta, varrho, amplitude)
    low, high = LAMBDA_BRACKET

    if stefan_residual(low, st) * stefan_residual(high, st) > 0.0:
        raise RootNotFoundError(
            f"No similarity root in [{low:g}, {high:g}] for Stefan number {st:g} "
            "(a root exists only for 0 < St < 1)."
        )

    return float(
        bisect(
            stefan_residual,
            low,
            high,
            args=(st,),
            xtol=1e-15,
            rtol=4.0 * np.finfo(float).eps,
            maxiter=200,
        )
    )


@dataclass(frozen=True)
class StefanSimilarity:
    eta: float
    varrho: float
    amplitude: float
    lam: float
    t0: float
    x0: float = 0.0

    def __post_init__(self) -> None:
        if self.t0 <= 0.0:
            raise ValueError(f"Similarity time offset must be positive, got t0={self.t0}.")

    @classmethod
    def build(
        cls,
        eta: float,
        varrho: float,
        amplitude: float,
        t0: float,
        x0: float = 0.0,
    ) -> StefanSimilarity:
        return cls(
            eta=eta,
            varrho=varrho,
            amplitude=amplitude,
            lam=stefan_lambda(eta, varrho, amplitude),
            t0=t0,
            x0=x0,
        )

    @classmethod
    def with_initial_front(
        cls,
        eta: float,
        varrho: float,
        amplitude: float,
        t0: float,
        xstar: float,
    ) -> StefanSimilarity:
        """
        Place the similarity origin so that the front sits at xstar at t = 0.
        """
        lam = stefan_lambda(eta, varrho, amplitude)
        x0 = xstar - 2.0 * lam * math.sqrt(eta * t0)
        return cls(eta=eta, varrho=varrho, amplitude=amplitude, lam=lam, t0=t0, x0=x0)


def stefan_front(ss: StefanSimilarity, t: float | np.ndarray) -> float | np.ndarray:
    return ss.x0 + 2.0 * ss.lam * np.sqrt(ss.eta * (ss.t0 + np.asarray(t, dtype=float)))


def stefan_front_speed(ss: StefanSimilarity, t: float) -> float:
    return float(ss.lam * math.sqrt(ss.eta / (ss.t0 + t)))


def stefan_front_gradient(ss: StefanSimilarity, t: float) -> float:
    return float(-ss.amplitude / (erfcx(ss.lam) * math.sqrt(math.pi * ss.eta * (ss.t0 + t))))


def stefan_profile(ss: StefanSimilarity, t: float, grid: Grid1D) -> SystemState:
    """
    Similarity state at time t0 + t in the fixed frame (distance from the front).
    """
    if t < 0.0:
        raise ValueError(f"Time must be non-negative, got t={t}.")

    tau = ss.t0 + t
    xi = grid.nodes / (2.0 * math.sqrt(ss.eta * tau))
    shifted = ss.lam + xi

    # erfc(lam + xi) / erfc(lam) written with erfcx to avoid underflow.
    ratio = erfcx(shifted) / erfcx(ss.lam) * np.exp(ss.lam**2 - shifted**2)
    u1 = ss.amplitude * (ratio - 1.0)

    return SystemState.from_arrays(grid, u1, np.zeros(grid.n), float(stefan_front(ss, t)))


# Dirichlet heat equation on [0, L] by continuum sine series.


def heat_series_solution(p0: PhaseProfile, eta: float, t: float) -> PhaseProfile:
    """
    Propagate the sine series of p0 with the continuum rates eta * (k pi / L)^2.
    """
    if t < 0.0:
        raise ValueError(f"Time must be non-negative, got t={t}.")

    grid = p0.grid
    modes = np.arange(1, grid.n + 1, dtype=float)
    rates = eta * (modes * np.pi / grid.L) ** 2

    coefficients = dst(p0.values, type=1, norm="ortho")
    values = idst(coefficients * np.exp(-rates * t), type=1, norm="ortho")

    return PhaseProfile(grid=grid, values=values)


# Monte Carlo harness for the noise covariance.


@dataclass(frozen=True)
class CovarianceEstimate:
    x: float
    y: float
    empirical: float
    standard_error: float
    expected: float

    @property
    def z_score(self) -> float:
        if self.standard_error == 0.0:
            return 0.0 if self.empirical == self.expected else float("inf")

        return abs(self.empirical - self.expected) / self.standard_error

    def within(self, n_standard_errors: float = 3.0) -> bool:
        return self.z_score <= n_standard_errors


def covariance_monte_carlo(
    k: NoiseKernel,
    pairs: Sequence[tuple[float, float]],
    t: float,
    n_samples: int,
    rng: np.random.Generator,
    n_steps: int = 1,
) -> list[CovarianceEstimate]:
    """
    Empirical Cov(xi_t(x), xi_t(y)) for xi_t = sum of T_zeta dW over n_steps.

    Compared with t * covariance(x, y).
    """
    if n_samples < 2 or n_steps < 1:
        raise ValueError(f"Need n_samples >= 2 and n_steps >= 1, got {n_samples}, {n_steps}.")

    points = np.unique(np.asarray(pairs, dtype=float).reshape(-1))
    matrix = k.matrix(points) * k.dy
    dt = t / n_steps
    scale = increment_scale(k, dt)

    accumulated = np.zeros((n_samples, points.size))

    for _ in range(n_steps):
        w = rng.normal(0.0, scale, size=(n_samples, k.m_y))
        accumulated += w @ matrix.T

    column = {float(point): index for index, point in enumerate(points)}
    estimates: list[CovarianceEstimate] = []

    for x, y in pairs:
        products = accumulated[:, column[float(x)]] * accumulated[:, column[float(y)]]
        estimates.append(
            CovarianceEstimate(
                x=float(x),
                y=float(y),
                empirical=float(products.mean()),
                standard_error=float(products.std(ddof=1) / math.sqrt(n_samples)),
                expected=t * covariance(k, x, y),
            )
        )

    return estimates
