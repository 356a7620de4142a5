from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from smbsim.app.services.errors import ExpressionError, InvalidStateError
from smbsim.app.services.expressions import ScalarField
from smbsim.app.services.grid_core import (
    BoundaryTrace,
    Grid1D,
    PhaseProfile,
    SystemState,
    boundary_trace,
    first_derivative_values,
)


logger = logging.getLogger(__name__)

DriftFunction = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
SigmaFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
ProfileFunction = Callable[[np.ndarray], np.ndarray]
FrontLaw = Callable[[float, float], float]

BOUNDARY_TOLERANCE = 1e-12
AFFINE_TOLERANCE = 1e-10


def _evaluate(function: Callable[..., object], *args: np.ndarray) -> np.ndarray:
    shape = np.broadcast_shapes(*(np.shape(arg) for arg in args))
    return np.broadcast_to(np.asarray(function(*args), dtype=float), shape)


@dataclass(frozen=True, eq=False)
class AffineSigma:
    """
    Claimed decomposition sigma(x, y) = sigma1(x) + sigma2(x) * y per phase.

    Each part takes the same spatial argument as the matching sigma, so the
    minus parts are evaluated at x <= 0.
    """

    sigma1_plus: ProfileFunction
    sigma2_plus: ProfileFunction
    sigma1_minus: ProfileFunction
    sigma2_minus: ProfileFunction


@dataclass(frozen=True)
class SampleBox:
    x_max: float = 5.0
    y_max: float = 2.0
    z_max: float = 2.0
    points: int = 21

    def __post_init__(self) -> None:
        if self.points < 3:
            raise ValueError(f"Sample lattice needs at least 3 points per axis, got {self.points}.")

        if min(self.x_max, self.y_max, self.z_max) <= 0.0:
            raise ValueError("Sample box extents must be positive.")

    @property
    def x_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.points)

    @property
    def y_axis(self) -> np.ndarray:
        return np.linspace(-self.y_max, self.y_max, self.points)

    @property
    def z_axis(self) -> np.ndarray:
        return np.linspace(-self.z_max, self.z_max, self.points)


def sample_lattice(x_max: float = 5.0, y_max: float = 2.0, points: int = 11) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.meshgrid(np.linspace(0.0, x_max, points), np.linspace(-y_max, y_max, points), indexing="ij")
    return x, y


@dataclass(frozen=True, eq=False)
class ModelCoefficients:
    """
    Coefficients of the two-phase problem.

    mu_plus/mu_minus take (x, y, z) = (position, value, gradient); the minus
    phase is evaluated at -x. sigma_plus/sigma_minus take (x, y). rho maps
    the boundary trace (g1, g2) to the front speed.
    """

    mu_plus: DriftFunction
    mu_minus: DriftFunction
    sigma_plus: SigmaFunction
    sigma_minus: SigmaFunction
    rho: FrontLaw
    eta_plus: float = 1.0
    eta_minus: float = 1.0
    c: float = 1.0
    affine_sigma: AffineSigma | None = None
    name: str = "custom"
    enforce_assumptions: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        if self.eta_plus <= 0.0 or self.eta_minus <= 0.0:
            raise ValueError(
                f"Diffusivities must be positive, got eta_plus={self.eta_plus}, eta_minus={self.eta_minus}."
            )

        if self.c < 0.0:
            raise ValueError(f"Spectrum shift c must be non-negative, got c={self.c}.")

        if not self.enforce_assumptions:
            return

        for name, residual in boundary_residuals(self).items():
            if residual > BOUNDARY_TOLERANCE:
                raise ValueError(
                    f"{name}(0, 0) = {residual:g} violates the boundary condition sigma(0, 0) = 0."
                )

        residual = affine_residual(self)

        if residual is not None and residual > AFFINE_TOLERANCE:
            raise ValueError(f"Claimed affine sigma decomposition is off by {residual:g}.")

    def front_speed(self, trace: BoundaryTrace) -> float:
        return float(self.rho(trace.g1, trace.g2))


def boundary_residuals(mc: ModelCoefficients) -> dict[str, float]:
    zero = np.zeros(1)
    return {
        "sigma_plus": float(abs(_evaluate(mc.sigma_plus, zero, zero)[0])),
        "sigma_minus": float(abs(_evaluate(mc.sigma_minus, zero, zero)[0])),
    }


def affine_residual(mc: ModelCoefficients) -> float | None:
    if mc.affine_sigma is None:
        return None

    affine = mc.affine_sigma
    x, y = sample_lattice()

    plus = _evaluate(mc.sigma_plus, x, y) - (
        _evaluate(affine.sigma1_plus, x) + _evaluate(affine.sigma2_plus, x) * y
    )
    minus = _evaluate(mc.sigma_minus, -x, y) - (
        _evaluate(affine.sigma1_minus, -x) + _evaluate(affine.sigma2_minus, -x) * y
    )

    return float(max(np.abs(plus).max(), np.abs(minus).max()))


def _require_finite(values: np.ndarray, grid: Grid1D, label: str) -> None:
    if np.isfinite(values).all():
        return

    node = int(np.flatnonzero(~np.isfinite(values))[0])
    raise InvalidStateError(
        f"{label} is not finite at node {node + 1} (x = {grid.nodes[node]:g})."
    )


def drift_values(
    mc: ModelCoefficients,
    grid: Grid1D,
    u1: np.ndarray,
    u2: np.ndarray,
    xstar: float,
    g1: float,
    g2: float,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """
    Array form of eval_drift. Returns (phase-1 drift, phase-2 drift,
    scalar drift rho + c*x*, rho).
    """
    nodes = grid.nodes
    derivative1 = first_derivative_values(u1, grid.h)
    derivative2 = first_derivative_values(u2, grid.h)

    rho = float(mc.rho(g1, g2))

    if not np.isfinite(rho):
        raise InvalidStateError(f"Front law returned {rho} for trace ({g1:g}, {g2:g}).")

    drift1 = _evaluate(mc.mu_plus, nodes, u1, derivative1) + derivative1 * rho + mc.c * u1
    drift2 = _evaluate(mc.mu_minus, -nodes, u2, derivative2) - derivative2 * rho + mc.c * u2

    _require_finite(drift1, grid, "Phase 1 drift")
    _require_finite(drift2, grid, "Phase 2 drift")

    return drift1, drift2, rho + mc.c * xstar, rho


def sigma_values(
    mc: ModelCoefficients,
    grid: Grid1D,
    u1: np.ndarray,
    u2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    nodes = grid.nodes
    sigma1 = np.array(_evaluate(mc.sigma_plus, nodes, u1), dtype=float)
    sigma2 = np.array(_evaluate(mc.sigma_minus, -nodes, u2), dtype=float)

    _require_finite(sigma1, grid, "Phase 1 sigma")
    _require_finite(sigma2, grid, "Phase 2 sigma")

    return sigma1, sigma2


def eval_drift(
    mc: ModelCoefficients,
    s: SystemState,
    tr: BoundaryTrace | None = None,
) -> tuple[tuple[PhaseProfile, PhaseProfile], float]:
    """
    B(u) = (mu_+ + u1' rho, mu_- - u2' rho, rho) + c * id, nodewise.
    """
    if tr is None:
        tr = boundary_trace(s)

    drift1, drift2, front, _ = drift_values(
        mc, s.grid, s.u1.values, s.u2.values, s.xstar, tr.g1, tr.g2
    )

    return (
        (PhaseProfile(grid=s.grid, values=drift1), PhaseProfile(grid=s.grid, values=drift2)),
        front,
    )


def eval_sigma(mc: ModelCoefficients, s: SystemState) -> tuple[PhaseProfile, PhaseProfile]:
    sigma1, sigma2 = sigma_values(mc, s.grid, s.u1.values, s.u2.values)
    return PhaseProfile(grid=s.grid, values=sigma1), PhaseProfile(grid=s.grid, values=sigma2)


# Truncation h_N: 1 - q((x - N) / margin) on [N, N + margin] with the
# quintic smoothstep q(s) = 6s^5 - 15s^4 + 10s^3.

_SMOOTHSTEP_SLOPE = 15.0 / 8.0


@dataclass(frozen=True)
class TruncationLevel:
    N: float
    margin: float = 1.0

    def __post_init__(self) -> None:
        if self.N < 0.0:
            raise ValueError(f"Truncation radius must be non-negative, got N={self.N}.")

        if self.margin <= 0.0:
            raise ValueError(f"Truncation margin must be positive, got {self.margin}.")

    @property
    def lipschitz_constant(self) -> float:
        return _SMOOTHSTEP_SLOPE / self.margin

    def factor(self, norm: float) -> float:
        if norm <= self.N:
            return 1.0

        if norm >= self.N + self.margin or not np.isfinite(norm):
            return 0.0

        s = (norm - self.N) / self.margin
        return float(1.0 - s**3 * (10.0 + s * (-15.0 + 6.0 * s)))


def truncate_coefficient(t: TruncationLevel, norm: float, value: np.ndarray) -> np.ndarray:
    factor = t.factor(norm)

    if factor == 1.0:
        return np.array(value, dtype=float)

    return factor * np.asarray(value, dtype=float)


@dataclass(frozen=True, eq=False)
class TruncatedFrontLaw:
    """
    rho_N(g) = h_N(max(|g1|, |g2|)) * rho(g).
    """

    rho: FrontLaw
    level: TruncationLevel

    def __call__(self, g1: float, g2: float) -> float:
        factor = self.level.factor(max(abs(g1), abs(g2)))
        value = self.rho(g1, g2)

        if factor == 1.0:
            return value

        return factor * value


def truncate_boundary_law(mc: ModelCoefficients, N: float) -> ModelCoefficients:
    return dataclasses.replace(
        mc,
        rho=TruncatedFrontLaw(rho=mc.rho, level=TruncationLevel(N=N)),
        name=f"{mc.name}[rho_N={N:g}]",
    )


# Advisory assumption checks.


@dataclass(frozen=True)
class ValidationIssue:
    severity: str
    coefficient: str
    message: str


@dataclass(frozen=True)
class LipschitzEstimate:
    coefficient: str
    value: float
    spread: float
    method: str = "finite_difference"


@dataclass(frozen=True)
class GrowthEnvelope:
    coefficient: str
    a_max: float
    a_tail: float
    b: float


@dataclass(frozen=True)
class ValidationReport:
    model_name: str
    lipschitz: dict[str, LipschitzEstimate]
    growth: dict[str, GrowthEnvelope]
    boundary_residuals: dict[str, float]
    affine_residual: float | None
    rho_bounded: bool
    issues: list[ValidationIssue]

    @property
    def is_valid(self) -> bool:
        return not any(issue.severity == "error" for issue in self.issues)


def _add_error(issues: list[ValidationIssue], coefficient: str, message: str) -> None:
    issues.append(ValidationIssue(severity="error", coefficient=coefficient, message=message))


def _add_warning(issues: list[ValidationIssue], coefficient: str, message: str) -> None:
    issues.append(ValidationIssue(severity="warning", coefficient=coefficient, message=message))


def _axis_quotients(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    return np.abs(np.diff(values, axis=axis)) / spacing


def _local_lipschitz(values: np.ndarray, spacings: dict[int, float]) -> tuple[float, float]:
    """
    Max axis-wise difference quotient over the lattice, and its spread over
    the x-slices (axis 0).
    """
    per_slice = np.zeros(values.shape[0])

    for axis, spacing in spacings.items():
        quotients = _axis_quotients(values, axis, spacing)
        reduce_axes = tuple(range(1, quotients.ndim))
        slice_max = quotients.max(axis=reduce_axes) if reduce_axes else quotients

        if axis == 0:
            # A quotient along x belongs to both slices it joins.
            per_slice[:-1] = np.maximum(per_slice[:-1], slice_max)
            per_slice[1:] = np.maximum(per_slice[1:], slice_max)
        else:
            per_slice = np.maximum(per_slice, slice_max)

    return float(per_slice.max()), float(per_slice.max() - per_slice.min())


def _symbolic_field(function: object) -> ScalarField | None:
    if isinstance(function, ScalarField):
        return function

    inner = getattr(function, "field", None)
    return inner if isinstance(inner, ScalarField) else None


def _symbolic_lipschitz(
    field: ScalarField,
    args: tuple[np.ndarray, ...],
    positions: Sequence[int],
) -> tuple[float, float] | None:
    """
    Max |partial| over the lattice along the given arguments, and its spread
    over the slices of axis 0. None when a partial is not finite there.
    """
    per_slice: np.ndarray | None = None

    for position in positions:
        try:
            partial = field.partial(field.variables[position])
        except (ExpressionError, TypeError, ValueError, NameError):
            return None

        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.abs(_evaluate(partial, *args))

        if not np.isfinite(values).all():
            return None

        reduce_axes = tuple(range(1, values.ndim))
        slice_max = values.max(axis=reduce_axes) if reduce_axes else values
        per_slice = slice_max if per_slice is None else np.maximum(per_slice, slice_max)

    if per_slice is None:
        return None

    return float(per_slice.max()), float(per_slice.max() - per_slice.min())


def _lipschitz_estimate(
    name: str,
    function: object,
    args: tuple[np.ndarray, ...],
    values: np.ndarray,
    spacings: dict[int, float],
) -> LipschitzEstimate:
    """
    Exact partials for compiled expressions, difference quotients otherwise.

    Axis k of the lattice is argument k of the coefficient.
    """
    field = _symbolic_field(function)

    if field is not None:
        symbolic = _symbolic_lipschitz(field, args, tuple(spacings))

        if symbolic is not None:
            return LipschitzEstimate(coefficient=name, value=symbolic[0], spread=symbolic[1], method="symbolic")

    value, spread = _local_lipschitz(values, spacings)
    return LipschitzEstimate(coefficient=name, value=value, spread=spread)


def _growth_envelope(name: str, values: np.ndarray, x: np.ndarray, magnitude: np.ndarray) -> GrowthEnvelope:
    """
    Fit |F| + |dF/dx| <= a(x) + b (|y| + |z|) on the lattice.

    a(x) is the value at (y, z) = 0; b is the smallest slope covering the rest.
    """
    dx = x[1] - x[0]
    dfdx = np.gradient(values, dx, axis=0)
    envelope = np.abs(values) + np.abs(dfdx)

    centre = tuple(size // 2 for size in values.shape[1:])
    a_hat = envelope[(slice(None),) + centre]

    excess = envelope - a_hat.reshape((-1,) + (1,) * (values.ndim - 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.where(magnitude > 0.0, np.maximum(excess, 0.0) / magnitude, 0.0)

    return GrowthEnvelope(
        coefficient=name,
        a_max=float(a_hat.max()),
        a_tail=float(a_hat[-1]),
        b=float(slopes.max()),
    )


def validate_assumptions(mc: ModelCoefficients, sample_box: SampleBox | None = None) -> ValidationReport:
    """
    Sampling-based checks of the coefficient assumptions.

    The report flags violations seen on the sample lattice; passing it does not
    prove the assumptions hold.
    """
    box = sample_box or SampleBox()
    issues: list[ValidationIssue] = []
    lipschitz: dict[str, LipschitzEstimate] = {}
    growth: dict[str, GrowthEnvelope] = {}

    x_axis = box.x_axis
    y_axis = box.y_axis
    z_axis = box.z_axis
    dy = y_axis[1] - y_axis[0]
    dz = z_axis[1] - z_axis[0]

    x3, y3, z3 = np.meshgrid(x_axis, y_axis, z_axis, indexing="ij")
    x2, y2 = np.meshgrid(x_axis, y_axis, indexing="ij")

    fields = {
        "mu_plus": (mc.mu_plus, (x3, y3, z3)),
        "mu_minus": (mc.mu_minus, (-x3, y3, z3)),
        "sigma_plus": (mc.sigma_plus, (x2, y2)),
        "sigma_minus": (mc.sigma_minus, (-x2, y2)),
    }

    for name, (function, args) in fields.items():
        values = _evaluate(function, *args)

        if not np.isfinite(values).all():
            _add_error(issues, name, "Non-finite values on the sample lattice.")
            continue

        if values.ndim == 3:
            estimate = _lipschitz_estimate(name, function, args, values, {1: dy, 2: dz})
            growth[name] = _growth_envelope(name, values, x_axis, np.abs(y3) + np.abs(z3))
        else:
            estimate = _lipschitz_estimate(name, function, args, values, {1: dy})
            growth[name] = _growth_envelope(name, values, x_axis, np.abs(y2))

        lipschitz[name] = estimate
        value, spread = estimate.value, estimate.spread

        envelope = growth[name]
        if envelope.a_max > 0.0 and envelope.a_tail > 0.5 * envelope.a_max:
            _add_warning(
                issues,
                name,
                f"Growth envelope a(x) does not decay on [0, {box.x_max:g}] "
                f"(a = {envelope.a_tail:.3g} at the far end, max {envelope.a_max:.3g}).",
            )

        if spread > 0.5 * max(value, 1e-300) and value > 0.0:
            _add_warning(
                issues,
                name,
                f"Local Lipschitz constant varies with x (spread {spread:.3g} of {value:.3g}).",
            )

    g1, g2 = np.meshgrid(y_axis, y_axis, indexing="ij")
    rho_values = np.vectorize(lambda a, b: float(mc.rho(float(a), float(b))))(g1, g2)

    if np.isfinite(rho_values).all():
        estimate = _lipschitz_estimate("rho", mc.rho, (g1, g2), rho_values, {0: dy, 1: dy})
        lipschitz["rho"] = dataclasses.replace(estimate, spread=0.0)
    else:
        _add_error(issues, "rho", "Non-finite front speed on the sample box.")

    rho_bounded = _front_law_bounded(mc.rho, box.y_max)

    residuals = boundary_residuals(mc)
    for name, residual in residuals.items():
        if residual > BOUNDARY_TOLERANCE:
            _add_error(
                issues,
                name,
                f"Boundary condition violated: |{name}(0, 0)| = {residual:g}.",
            )

    residual = affine_residual(mc)
    if residual is not None and residual > AFFINE_TOLERANCE:
        _add_error(issues, "sigma", f"Affine decomposition residual {residual:g} exceeds {AFFINE_TOLERANCE:g}.")

    return ValidationReport(
        model_name=mc.name,
        lipschitz=lipschitz,
        growth=growth,
        boundary_residuals=residuals,
        affine_residual=residual,
        rho_bounded=rho_bounded,
        issues=issues,
    )


def _front_law_bounded(rho: FrontLaw, base: float) -> bool:
    """
    True when |rho| stops growing on boxes of radius base * 10^k, k = 0..4.
    """
    maxima = []

    for scale in (1.0, 10.0, 100.0, 1000.0, 10000.0):
        edge = base * scale
        ring = np.linspace(-edge, edge, 9)
        values = [abs(float(rho(float(a), float(b)))) for a in ring for b in ring]
        maxima.append(max(values))

    if not np.isfinite(maxima).all():
        return False

    return maxima[-1] <= 1.01 * maxima[-2] + 1e-12


def print_validation_report(report: ValidationReport) -> None:
    print(f"Model: {report.model_name}")
    print()
    print("Local Lipschitz estimates:")

    for estimate in report.lipschitz.values():
        print(f"  - {estimate.coefficient}: {estimate.value:.6g} ({estimate.method}, x-spread {estimate.spread:.3g})")

    print()
    print("Growth envelopes a(|x|) + b (|y| + |z|):")

    for envelope in report.growth.values():
        print(
            f"  - {envelope.coefficient}: a_max={envelope.a_max:.4g} "
            f"a_tail={envelope.a_tail:.4g} b={envelope.b:.4g}"
        )

    print()
    print("Boundary residuals |sigma(0, 0)|:")

    for name, residual in report.boundary_residuals.items():
        print(f"  - {name}: {residual:.3g}")

    if report.affine_residual is not None:
        print(f"Affine decomposition residual: {report.affine_residual:.3g}")

    print(f"Front law bounded: {'yes' if report.rho_bounded else 'no'}")
    print()

    if not report.issues:
        print("Validation passed. No issues found.")
        return

    for issue in report.issues:
        print(f"{issue.severity.upper()}: [{issue.coefficient}] {issue.message}")

    if report.is_valid:
        print("Validation completed with warnings.")
    else:
        print("Validation failed.")
