from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from smbsim.app.services.coefficients import AffineSigma, ModelCoefficients
from smbsim.app.services.expressions import ScalarField, compile_field
from smbsim.app.services.grid_core import Grid1D, SystemState
from smbsim.app.services.noise import NoiseKernel
from smbsim.app.services.validation import StefanSimilarity, stefan_profile


DRIFT_VARIABLES = ("x", "y", "z")
SIGMA_VARIABLES = ("x", "y")
FRONT_VARIABLES = ("g1", "g2")
PROFILE_VARIABLES = ("x",)

EXPRESSION_KEYS = ("mu_plus", "mu_minus", "sigma_plus", "sigma_minus", "rho")
AFFINE_KEYS = ("sigma1_plus", "sigma2_plus", "sigma1_minus", "sigma2_minus")


@dataclass(frozen=True)
class ModelPreset:
    name: str
    defaults: dict[str, float]
    expressions: Callable[[Mapping[str, str]], dict[str, str]]
    description: str


def _stefan(_: Mapping[str, str]) -> dict[str, str]:
    return {
        "mu_plus": "0",
        "mu_minus": "0",
        "sigma_plus": "sigma*y",
        "sigma_minus": "sigma*y",
        "rho": "varrho*(g2 - g1)",
        "sigma1_plus": "0",
        "sigma2_plus": "sigma",
        "sigma1_minus": "0",
        "sigma2_minus": "sigma",
    }


def _burgers(overrides: Mapping[str, str]) -> dict[str, str]:
    return {**_stefan(overrides), "mu_plus": "y*z", "mu_minus": "y*z"}


REACTION_KEYS = ("f", "f_plus", "f_minus")


def _reaction(overrides: Mapping[str, str]) -> dict[str, str]:
    unknown = sorted(set(overrides) - set(REACTION_KEYS))

    if unknown:
        raise ValueError(f"Unknown reaction expression keys: {', '.join(unknown)}.")

    if "f" in overrides and ("f_plus" in overrides or "f_minus" in overrides):
        raise ValueError("Give either f or f_plus/f_minus, not both.")

    shared = overrides.get("f", "-y^3")
    return {
        **_stefan(overrides),
        "mu_plus": overrides.get("f_plus", shared),
        "mu_minus": overrides.get("f_minus", shared),
    }


def _affine_bounded(_: Mapping[str, str]) -> dict[str, str]:
    return {
        "mu_plus": "0",
        "mu_minus": "0",
        "sigma_plus": "a*x*exp(-x) + sigma*y",
        "sigma_minus": "a*(-x)*exp(x) + sigma*y",
        "rho": "varrho*tanh(g2 - g1)",
        "sigma1_plus": "a*x*exp(-x)",
        "sigma2_plus": "sigma",
        "sigma1_minus": "a*(-x)*exp(x)",
        "sigma2_minus": "sigma",
    }


def _superlinear(_: Mapping[str, str]) -> dict[str, str]:
    return {
        "mu_plus": "0",
        "mu_minus": "0",
        "sigma_plus": "sigma*y",
        "sigma_minus": "sigma*y",
        "rho": "kappa*g1*abs(g1)",
        "sigma1_plus": "0",
        "sigma2_plus": "sigma",
        "sigma1_minus": "0",
        "sigma2_minus": "sigma",
    }


def _constant_sigma(_: Mapping[str, str]) -> dict[str, str]:
    return {
        "mu_plus": "0",
        "mu_minus": "0",
        "sigma_plus": "1",
        "sigma_minus": "0",
        "rho": "varrho*(g2 - g1)",
    }


def _order_book(_: Mapping[str, str]) -> dict[str, str]:
    # Sellers right of the mid price, buyers left; order-flow noise vanishes at the front.
    return {
        "mu_plus": "0",
        "mu_minus": "0",
        "sigma_plus": "a_sell*x*exp(-x/ell)",
        "sigma_minus": "a_buy*(-x)*exp(x/ell)",
        "rho": "varrho*(g2 - g1)",
        "sigma1_plus": "a_sell*x*exp(-x/ell)",
        "sigma2_plus": "0",
        "sigma1_minus": "a_buy*(-x)*exp(x/ell)",
        "sigma2_minus": "0",
    }


def _custom(overrides: Mapping[str, str]) -> dict[str, str]:
    missing = [key for key in EXPRESSION_KEYS if key not in overrides]

    if missing:
        raise ValueError(f"Custom model needs expressions for: {', '.join(missing)}.")

    unknown = sorted(set(overrides) - set(EXPRESSION_KEYS) - set(AFFINE_KEYS))

    if unknown:
        raise ValueError(f"Unknown custom expression keys: {', '.join(unknown)}.")

    return dict(overrides)


MODEL_PRESETS: dict[str, ModelPreset] = {
    "stefan": ModelPreset(
        name="stefan",
        defaults={"varrho": 1.0, "sigma": 0.0},
        expressions=_stefan,
        description="Two-phase Stefan problem with multiplicative noise.",
    ),
    "burgers": ModelPreset(
        name="burgers",
        defaults={"varrho": 1.0, "sigma": 0.0},
        expressions=_burgers,
        description="Two-phase viscous Burgers equation.",
    ),
    "reaction": ModelPreset(
        name="reaction",
        defaults={"varrho": 1.0, "sigma": 0.0},
        expressions=_reaction,
        description="Reaction-diffusion with reaction terms f_plus(y), f_minus(y) vanishing at 0.",
    ),
    "affine_bounded": ModelPreset(
        name="affine_bounded",
        defaults={"a": 0.5, "sigma": 0.5, "varrho": 1.0},
        expressions=_affine_bounded,
        description="Affine noise with a bounded front law (global existence regime).",
    ),
    "superlinear": ModelPreset(
        name="superlinear",
        defaults={"kappa": 1.0, "sigma": 0.5},
        expressions=_superlinear,
        description="Quadratic front law, engineered to blow up.",
    ),
    "constant_sigma": ModelPreset(
        name="constant_sigma",
        defaults={"varrho": 1.0},
        expressions=_constant_sigma,
        description="Stefan problem with sigma_plus = 1 (violates sigma(0, 0) = 0).",
    ),
    "order_book": ModelPreset(
        name="order_book",
        defaults={"a_sell": 0.5, "a_buy": 0.5, "ell": 1.0, "varrho": 1.0},
        expressions=_order_book,
        description="Limit order book densities with order-flow noise.",
    ),
    "custom": ModelPreset(
        name="custom",
        defaults={},
        expressions=_custom,
        description="User expressions for mu, sigma and rho.",
    ),
}


@dataclass(frozen=True, eq=False)
class FrontLawField:
    """
    Front law compiled from an expression; returns plain floats.
    """

    field: ScalarField

    def __call__(self, g1: float, g2: float) -> float:
        return float(self.field(g1, g2))


def build_model(
    preset: str,
    params: Mapping[str, float] | None = None,
    expressions: Mapping[str, str] | None = None,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    c: float = 1.0,
    enforce_assumptions: bool = True,
) -> ModelCoefficients:
    if preset not in MODEL_PRESETS:
        raise ValueError(f"Unknown model preset {preset!r}. Known: {', '.join(MODEL_PRESETS)}.")

    model_preset = MODEL_PRESETS[preset]
    params = dict(params or {})
    expressions = dict(expressions or {})

    if preset != "custom":
        unknown = sorted(set(params) - set(model_preset.defaults))

        if unknown:
            raise ValueError(f"Unknown parameters for preset {preset!r}: {', '.join(unknown)}.")

        if preset != "reaction" and expressions:
            raise ValueError(f"Preset {preset!r} takes no expressions.")

    values = {**model_preset.defaults, **params}
    texts = model_preset.expressions(expressions)

    if preset == "reaction":
        for key, label in (("mu_plus", "f_plus"), ("mu_minus", "f_minus")):
            reaction = float(compile_field(texts[key], ("y",), values)(0.0))

            if abs(reaction) > 1e-12:
                raise ValueError(f"Reaction term must vanish at 0, got {label}(0) = {reaction:g}.")

    mu_plus = compile_field(texts["mu_plus"], DRIFT_VARIABLES, values)
    mu_minus = compile_field(texts["mu_minus"], DRIFT_VARIABLES, values)
    sigma_plus = compile_field(texts["sigma_plus"], SIGMA_VARIABLES, values)
    sigma_minus = compile_field(texts["sigma_minus"], SIGMA_VARIABLES, values)
    rho = FrontLawField(field=compile_field(texts["rho"], FRONT_VARIABLES, values))

    affine = None
    if all(key in texts for key in AFFINE_KEYS):
        parts = [compile_field(texts[key], PROFILE_VARIABLES, values) for key in AFFINE_KEYS]
        affine = AffineSigma(*parts)

    return ModelCoefficients(
        mu_plus=mu_plus,
        mu_minus=mu_minus,
        sigma_plus=sigma_plus,
        sigma_minus=sigma_minus,
        rho=rho,
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        c=c,
        affine_sigma=affine,
        name=preset,
        enforce_assumptions=enforce_assumptions,
    )


# Kernels.

GAUSSIAN_WINDOW_WIDTHS = 7.0


def _gaussian(width: float) -> tuple[Callable, tuple[Callable, Callable, Callable]]:
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * width)
    w2 = width * width

    def zeta(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = x - y
        return norm * np.exp(-0.5 * s * s / w2)

    def zeta_dx(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = x - y
        return -s / w2 * zeta(x, y)

    def zeta_dxx(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = x - y
        return (s * s / w2 - 1.0) / w2 * zeta(x, y)

    def zeta_dxxx(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = x - y
        return (3.0 * s / w2 - s**3 / (w2 * w2)) / w2 * zeta(x, y)

    return zeta, (zeta_dx, zeta_dxx, zeta_dxxx)


def gaussian_kernel(width: float, y_min: float, y_max: float, m_y: int | None = None) -> NoiseKernel:
    """
    Convolution kernel zeta(x, y) = g(x - y), g the centred normal density.
    """
    if width <= 0.0:
        raise ValueError(f"Kernel width must be positive, got {width}.")

    if m_y is None:
        m_y = int(math.ceil((y_max - y_min) / (0.25 * width)))

    zeta, derivatives = _gaussian(width)
    return NoiseKernel(
        zeta=zeta,
        zeta_dx=derivatives,
        y_min=y_min,
        y_max=y_max,
        m_y=m_y,
        name=f"gaussian({width:g})",
    )


def indicator_kernel(a: float, b: float, m_y: int = 16) -> NoiseKernel:
    def zeta(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        inside = (y >= a) & (y <= b)
        return np.broadcast_to(np.where(inside, 1.0, 0.0), np.broadcast_shapes(np.shape(x), np.shape(y)))

    def zero(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))

    return NoiseKernel(
        zeta=zeta,
        zeta_dx=(zero, zero, zero),
        y_min=a,
        y_max=b,
        m_y=m_y,
        name=f"indicator({a:g},{b:g})",
        x_independent=True,
    )


def evaluation_window(grid: Grid1D, xstar: float, margin_fraction: float = 0.25) -> tuple[float, float]:
    """
    Range of x* +- x_j while the front stays inside the moving-frame margin.
    """
    reach = grid.L * (1.0 + margin_fraction)
    return xstar - reach, xstar + reach


def build_kernel(
    preset: str,
    grid: Grid1D,
    xstar: float = 0.0,
    width: float = 1.0,
    a: float = 0.0,
    b: float = 1.0,
    m_y: int | None = None,
) -> NoiseKernel:
    if preset == "gaussian":
        low, high = evaluation_window(grid, xstar)
        pad = GAUSSIAN_WINDOW_WIDTHS * width
        return gaussian_kernel(width, low - pad, high + pad, m_y)

    if preset == "indicator":
        return indicator_kernel(a, b, m_y or 16)

    raise ValueError(f"Unknown kernel preset {preset!r}. Known: gaussian, indicator.")


# Initial states.


def bump(x: np.ndarray) -> np.ndarray:
    return x * np.exp(-0.5 * x * x)


def initial_state(
    profile: str,
    grid: Grid1D,
    amplitude: float = 1.0,
    amplitude_minus: float = 0.0,
    xstar: float = 0.0,
    similarity: StefanSimilarity | None = None,
) -> SystemState:
    nodes = grid.nodes

    if profile == "zero":
        return SystemState.zeros(grid, xstar)

    if profile == "bump":
        return SystemState.from_arrays(grid, amplitude * bump(nodes), amplitude_minus * bump(nodes), xstar)

    if profile == "sine":
        shape = np.sin(np.pi * nodes / grid.L)
        return SystemState.from_arrays(grid, amplitude * shape, amplitude_minus * shape, xstar)

    if profile == "similarity":
        if similarity is None:
            raise ValueError("Similarity initial state needs a StefanSimilarity.")

        return stefan_profile(similarity, 0.0, grid)

    raise ValueError(f"Unknown initial profile {profile!r}. Known: zero, bump, sine, similarity.")
