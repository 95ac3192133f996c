"""
Ball integrals on flat R^n and radius-normalized monotonicity profiles.

All profiles are flat-case: the base metric is Euclidean, so the curvature
constant a may be fixed to 0 and balls may be taken of any radius. The
exponential weight e^{aρ²} survives only inside Θ, which is a pure 1-D
function and is checked on its own.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.ndimage import map_coordinates
from scipy.special import gamma
from scipy.stats import qmc

import pointwise_algebra as pa
from exterior_g2 import coeffs_to_matrix, ddt_residual_arrays, matrix_to_coeffs
from field_calculus import GridError, OperatorScheme, delta_beta, div_stress
from utils import geometric_ladder, make_rng

logger = logging.getLogger(__name__)

G2_VOLUME_KAPPA = 2.5
G2_NORMALIZED_KAPPA = 13.0 / 7.0
DDT_TOL = 1e-8
MONOTONE_TOL = 1e-9
PARALLEL_BAND = 10.0


class MonotonicityError(ValueError):
    pass


class RadiusError(MonotonicityError):
    pass


class ResidualValidationError(MonotonicityError):
    """A field offered as a dDT solution fails the equation at a node."""


class MultiplierError(MonotonicityError):
    pass


def unit_ball_volume(n):
    """ω_n = 2π^{n/2} / (nΓ(n/2))."""
    return 2.0 * math.pi ** (n / 2.0) / (n * gamma(n / 2.0))


# ---------------------------------------------------------------------------
# Weights and fields
# ---------------------------------------------------------------------------

class WeightKind(Enum):
    MODIFIED = "modified"      # tr(G⁻¹)·v
    VOLUME = "volume"          # v
    NORMALIZED = "normalized"  # v − 1


@dataclass(frozen=True)
class Weight:
    kind: WeightKind = WeightKind.VOLUME
    multiplier: Optional[Callable] = None

    def evaluate(self, B, points):
        v = pa.volume_from_matrix(B)
        if self.kind is WeightKind.MODIFIED:
            values = pa.trace_from_matrix(B) * v
        elif self.kind is WeightKind.VOLUME:
            values = v
        else:
            values = v - 1.0
        if self.multiplier is not None:
            f = np.broadcast_to(np.asarray(self.multiplier(points), dtype=float), values.shape)
            if np.any(f < 0):
                raise MultiplierError(f"multiplier is negative at {int(np.sum(f < 0))} evaluation points")
            values = values * f
        return values


@dataclass(frozen=True)
class FieldOnBall:
    """A 2-form on R^n given as points (N, n) -> coefficient matrices (N, n, n)."""

    dim: int
    evaluate: Callable
    center: tuple = None
    max_radius: float = math.inf
    radial: bool = False
    name: str = "field"

    def __post_init__(self):
        center = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float)
        if center.shape != (self.dim,):
            raise MonotonicityError(f"center must have {self.dim} coordinates")
        object.__setattr__(self, "center", tuple(center))

    @classmethod
    def constant(cls, B, center=None, name="constant"):
        B = np.asarray(B, dtype=float)
        pa.TwoFormPoint(B)

        def evaluate(points):
            return np.broadcast_to(B, (len(points),) + B.shape)

        return cls(B.shape[0], evaluate, center=center, radial=True, name=name)

    @classmethod
    def zero(cls, dim):
        return cls.constant(np.zeros((dim, dim)), name="zero")

    @classmethod
    def from_grid(cls, f, center=None, order=3, name="snapshot"):
        """Periodic extension of a sampled 2-form field by spline interpolation."""
        grid = f.grid
        spacings = np.asarray(grid.spacings)
        components = [np.ascontiguousarray(f.components[..., c]) for c in range(f.ncomp)]

        def evaluate(points):
            coords = (np.asarray(points, dtype=float) / spacings).T
            values = np.stack(
                [map_coordinates(comp, coords, order=order, mode="grid-wrap") for comp in components],
                axis=-1,
            )
            return coeffs_to_matrix(values, grid.dim)

        return cls(grid.dim, evaluate, center=center, name=name)

    def norm_at(self, points):
        return np.abs(self.evaluate(points)).max(axis=(-2, -1))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureConfig:
    epsabs: float = 1e-13
    epsrel: float = 1e-12
    limit: int = 200
    qmc_log2_points: int = 14
    seed: int = 0


@dataclass(frozen=True)
class BallIntegral:
    value: float
    error: float
    exhausted: bool = False
    method: str = "shell"


def ball_integral(field_, weight, rho, quad=QuadratureConfig()):
    """
    ∫_{B_ρ(p)} w·vol for the given weight.

    Radial fields with no multiplier reduce to ∫₀^ρ w(r)·nω_n r^{n−1} dr.
    Everything else uses scrambled Sobol points in the bounding cube with
    the first half of the sequence as the comparison estimate.
    """
    rho = float(rho)
    if not 0 < rho <= field_.max_radius:
        raise RadiusError(f"radius {rho} outside (0, {field_.max_radius}]")
    n = field_.dim
    center = np.asarray(field_.center)

    if field_.radial and weight.multiplier is None:
        area = n * unit_ball_volume(n)
        direction = np.zeros(n)
        direction[0] = 1.0

        def shell(r):
            point = (center + r * direction)[None, :]
            return float(weight.evaluate(field_.evaluate(point), point)[0]) * area * r ** (n - 1)

        value, error, info, *message = integrate.quad(
            shell, 0.0, rho, epsabs=quad.epsabs, epsrel=quad.epsrel, limit=quad.limit, full_output=1
        )
        if message:
            logger.warning("⚠ shell quadrature at ρ=%.4g: %s", rho, message[0].splitlines()[0])
        return BallIntegral(float(value), float(error), exhausted=bool(message), method="shell")

    sampler = qmc.Sobol(d=n, scramble=True, seed=quad.seed)
    unit = sampler.random_base2(quad.qmc_log2_points)
    points = center + rho * (2.0 * unit - 1.0)
    inside = np.sum((points - center) ** 2, axis=-1) <= rho * rho
    values = np.zeros(len(points))
    if inside.any():
        values[inside] = weight.evaluate(field_.evaluate(points[inside]), points[inside])
    cube = (2.0 * rho) ** n
    estimate = cube * values.mean()
    half = cube * values[: len(values) // 2].mean()
    return BallIntegral(float(estimate), float(abs(estimate - half)), exhausted=not inside.any(), method="sobol")


# ---------------------------------------------------------------------------
# Θ functions
# ---------------------------------------------------------------------------

def _require_nonnegative(a, tau):
    if a < 0 or tau < 0:
        raise MonotonicityError(f"Θ needs a ≥ 0 and τ ≥ 0, got a={a}, τ={tau}")


def theta(a, n, tau, kappa=1.0):
    """Θ(τ) = ω_n ∫₀^τ e^{aζ²} ζ^{n−κ+1} dζ by adaptive quadrature."""
    _require_nonnegative(a, tau)
    power = n - kappa + 1.0
    value, _ = integrate.quad(lambda z: math.exp(a * z * z) * z ** power, 0.0, tau, epsabs=0.0, epsrel=1e-12, limit=200)
    return unit_ball_volume(n) * value


def theta_closed(a, n, tau):
    """Closed form of Θ for odd n ≤ 7 (κ = 1)."""
    if n not in (1, 3, 5, 7):
        raise MonotonicityError(f"closed-form Θ is available for n ∈ {{1, 3, 5, 7}}, got {n}")
    _require_nonnegative(a, tau)
    omega = unit_ball_volume(n)
    if a == 0:
        return omega * tau ** (n + 1) / (n + 1)
    m = (n - 1) // 2
    T = tau * tau
    x = a * T
    if x < 2.0:
        # Series of e^{au}u^m integrated termwise
        total = 0.0
        term = T ** (m + 1)
        j = 0
        while True:
            contribution = term / (m + 1 + j)
            total += contribution
            if abs(contribution) <= 1e-17 * abs(total):
                break
            j += 1
            term *= a * T / j
        return omega * 0.5 * total
    partial = sum((-x) ** k / math.factorial(k) for k in range(m + 1))
    return omega * 0.5 * math.factorial(m) / (-a) ** (m + 1) * (1.0 - math.exp(x) * partial)


def theta_general(theta_fn, a, kappa, tau):
    """∫₀^τ e^{aζ²} θ(ζ) ζ^{1−κ} dζ for a caller-supplied θ."""
    _require_nonnegative(a, tau)
    value, _ = integrate.quad(lambda z: math.exp(a * z * z) * theta_fn(z) * z ** (1.0 - kappa), 0.0, tau, limit=200)
    return value


def flat_ball_identities(n, tau, quad=QuadratureConfig()):
    """ω_nτⁿ = ∫_{B_τ}vol and τ·∂_τ∫_{B_τ}vol = n∫_{B_τ}vol on flat R^n."""
    omega = unit_ball_volume(n)
    volume = ball_integral(FieldOnBall.zero(n), Weight(WeightKind.VOLUME), tau, quad).value
    boundary = n * omega * tau ** (n - 1)
    report = {
        "volume_residual": abs(omega * tau ** n - volume),
        "scaling_residual": abs(tau * boundary - n * volume),
    }
    scale = max(1.0, omega * tau ** n)
    report["pass"] = bool(max(report.values()) <= 1e-9 * scale)
    return report


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

@dataclass
class RadialProfile:
    kappa: float
    a: float
    radii: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    theta_terms: np.ndarray = None
    errors: np.ndarray = None
    weight: str = "volume"

    CSV_COLUMNS = ("rho", "raw", "normalized", "theta_term", "error_estimate")

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        _validate_radii(self.radii)
        self.raw = np.asarray(self.raw, dtype=float)
        self.normalized = np.asarray(self.normalized, dtype=float)
        if not np.all(np.isfinite(self.raw)):
            raise MonotonicityError("profile has non-finite ball integrals")
        if self.theta_terms is None:
            self.theta_terms = np.zeros_like(self.radii)
        if self.errors is None:
            self.errors = np.zeros_like(self.radii)

    @classmethod
    def from_values(cls, radii, values, kappa=1.0):
        """Wrap an already-normalized sequence."""
        return cls(kappa, 0.0, radii, values, values, weight="given")

    def to_rows(self):
        return [
            {"rho": r, "raw": raw, "normalized": m, "theta_term": t, "error_estimate": e}
            for r, raw, m, t, e in zip(self.radii, self.raw, self.normalized, self.theta_terms, self.errors)
        ]


def _validate_radii(radii):
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise RadiusError("radii must be positive and strictly increasing")


def profile(field_, weight, kappa=1.0, a=0.0, radii=None, quad=QuadratureConfig(), threads=1):
    """
    M(ρ) = e^{aρ²}ρ^{−κ}·I(ρ), plus 2aΘ(ρ) for the normalized weight.

    Ball integrals are independent per radius; results keep radius order.
    """
    if a < 0:
        raise MonotonicityError(f"a must be nonnegative, got {a}")
    radii = geometric_ladder(0.25) if radii is None else np.asarray(radii, dtype=float)
    _validate_radii(radii)

    def one(rho):
        return ball_integral(field_, weight, rho, quad)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, radii))
    else:
        results = [one(rho) for rho in radii]

    raw = np.array([r.value for r in results])
    factor = np.exp(a * radii ** 2) * radii ** (-kappa)
    theta_terms = np.zeros_like(radii)
    if weight.kind is WeightKind.NORMALIZED and a > 0:
        theta_terms = np.array([2.0 * a * theta(a, field_.dim, rho, kappa) for rho in radii])
    if any(r.exhausted for r in results):
        logger.warning("⚠ quadrature budget exhausted for %d radii", sum(r.exhausted for r in results))
    return RadialProfile(
        kappa=kappa,
        a=a,
        radii=radii,
        raw=raw,
        normalized=factor * raw + theta_terms,
        theta_terms=theta_terms,
        errors=factor * np.array([r.error for r in results]),
        weight=weight.kind.value,
    )


def check_monotone(profile_, tol=MONOTONE_TOL):
    """Non-decrease of M within tol·(1 + |M_i|) plus the quadrature error bars."""
    M = profile_.normalized
    if M.size < 2:
        raise RadiusError("monotonicity needs at least two radii")
    diffs = np.diff(M)
    allowed = tol * (1.0 + np.abs(M[:-1])) + profile_.errors[:-1] + profile_.errors[1:]
    margins = diffs + allowed
    passed = bool(np.all(margins >= 0))
    worst = int(np.argmin(margins))
    return {
        "check": "monotone",
        "params": {"kappa": profile_.kappa, "a": profile_.a, "weight": profile_.weight, "radii": len(M)},
        "pass": passed,
        "worst_drop": float(max(0.0, -diffs.min())),
        "location": None if passed else worst,
        "tolerance": tol,
    }


def g2_profile(field_, variant="volume", radii=None, a=0.0, quad=QuadratureConfig(), validation_points=256):
    """κ = 5/2 volume profile or κ = 13/7 normalized profile of a dDT field on R^7."""
    if field_.dim != 7:
        raise MonotonicityError(f"G2 profiles live on R^7, got n={field_.dim}")
    variants = {
        "volume": (Weight(WeightKind.VOLUME), G2_VOLUME_KAPPA),
        "normalized": (Weight(WeightKind.NORMALIZED), G2_NORMALIZED_KAPPA),
    }
    if variant not in variants:
        raise MonotonicityError(f"unknown G2 profile variant {variant!r}")
    radii = geometric_ladder(0.25) if radii is None else np.asarray(radii, dtype=float)
    _validate_radii(radii)

    sampler = qmc.Sobol(d=7, scramble=True, seed=quad.seed)
    nodes = np.asarray(field_.center) + radii[-1] * (2.0 * sampler.random(validation_points) - 1.0)
    residual = np.linalg.norm(ddt_residual_arrays(matrix_to_coeffs(field_.evaluate(nodes))), axis=-1)
    if residual.max() > DDT_TOL:
        raise ResidualValidationError(f"dDT residual {residual.max():.3e} exceeds {DDT_TOL:g} at a quadrature node")

    weight, kappa = variants[variant]
    return profile(field_, weight, kappa=kappa, a=a, radii=radii, quad=quad)


def vanishing_audit(field_, growth_exponent=1.0, radii=None, weight=Weight(WeightKind.NORMALIZED),
                    quad=QuadratureConfig()):
    """
    Fit the growth rate of ∫_{B_r}(v − 1) over a radius ladder.

    A nonzero field can only be consistent with the vanishing theorems if it
    grows at least like r^{growth_exponent}; the audit reports, never raises.
    """
    radii = geometric_ladder(1.0, ratio=2.0, rungs=8) if radii is None else np.asarray(radii, dtype=float)
    _validate_radii(radii)
    integrals = np.array([ball_integral(field_, weight, r, quad).value for r in radii])
    sampler = qmc.Sobol(d=field_.dim, scramble=True, seed=quad.seed)
    nodes = np.asarray(field_.center) + radii[-1] * (2.0 * sampler.random(256) - 1.0)
    field_vanishes = bool(field_.norm_at(nodes).max() <= 1e-14)
    if np.all(np.abs(integrals) <= 1e-14):
        exponent = None
        hypothesis_holds = True
    else:
        exponent = float(np.polyfit(np.log(radii), np.log(np.abs(integrals)), 1)[0])
        hypothesis_holds = exponent < growth_exponent
    consistent = field_vanishes or not hypothesis_holds
    return {
        "check": "vanishing",
        "params": {"n": field_.dim, "growth_exponent": growth_exponent, "field": field_.name},
        "exponent": exponent,
        "hypothesis_holds": hypothesis_holds,
        "field_vanishes": field_vanishes,
        "consistent": consistent,
        "pass": consistent,
    }


def dim2_parallel_check(beta, scheme=OperatorScheme(), band=PARALLEL_BAND):
    """On a 2-torus, δ_ββ = 0 exactly when Dβ = 0."""
    grid = beta.grid
    if grid.dim != 2:
        raise GridError(f"the parallel-form equivalence is a 2-dimensional statement, got n={grid.dim}")
    tol = scheme.tolerance(grid)
    delta = delta_beta(beta, beta, scheme).max_norm()
    parallel = max(
        float(np.abs(scheme.derivative(beta.components, i, h)).max()) for i, h in enumerate(grid.spacings)
    )
    divergence = div_stress(beta, scheme).max_norm()
    ratio = delta / parallel if parallel > tol else None
    equivalent = (delta <= tol) == (parallel <= band * tol)
    in_band = ratio is None or 1.0 / band <= ratio <= band
    return {
        "check": "dim2_parallel",
        "delta": delta,
        "parallel": parallel,
        "divergence": divergence,
        "ratio": ratio,
        "tolerance": tol,
        "equivalent": bool(equivalent),
        "pass": bool(equivalent and in_band),
    }


def lemma_4_12_audit(m, samples=100_000, seed=0, mu_max=100.0):
    """Sample μ ∈ [1, μ_max]^m and count failures of tr(G⁻¹) ≥ 1 + 2m/v in dimension 2m + 1."""
    if m < 1:
        raise MonotonicityError(f"m must be at least 1, got {m}")
    rng = make_rng(seed)
    mus = rng.uniform(1.0, mu_max, size=(samples, m))
    lhs, rhs = pa.odd_bound_values(mus)
    failing = lhs < rhs - pa.BOUND_TOL
    report = {
        "check": "odd_trace_bound",
        "params": {"m": m, "n": 2 * m + 1, "samples": samples, "seed": seed, "mu_max": mu_max},
        "failures": int(failing.sum()),
        "worst_gap": float((rhs - lhs).max()),
    }
    if failing.any():
        report["failure_region"] = {
            "mu_min": mus[failing].min(axis=0).tolist(),
            "mu_max": mus[failing].max(axis=0).tolist(),
        }
        logger.warning("⚠ odd trace bound fails on %d of %d samples (m=%d)", report["failures"], samples, m)
    else:
        logger.info("✓ odd trace bound holds on %d samples (m=%d)", samples, m)
    return report


def multiplier_defect(beta, hessian):
    """−Δ_β f = Σ K_ab ∂_a∂_b f for constant β; admissible multipliers have defect ≥ 0."""
    hessian = np.asarray(hessian, dtype=float)
    K = pa.g_inverse(beta.coeffs)
    return float(np.sum(K * hessian))


def kappa_condition(beta, kappa):
    trace = pa.trace_g_inverse(beta)
    return {"trace": trace, "kappa": kappa, "holds": bool(trace >= kappa - pa.BOUND_TOL)}


def format_profile_report(report):
    status = "✓" if report["pass"] else "✗"
    lines = [f"📈 {report['check']} {status}"]
    for key, value in report.get("params", {}).items():
        lines.append(f"   {key}: {value}")
    if "worst_drop" in report:
        lines.append(f"   worst drop: {report['worst_drop']:.3e} at {report['location']}")
    return "\n".join(lines)
