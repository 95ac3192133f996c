"""
Exterior calculus on flat periodic tori.

Fields are stored component-last: an array of shape (N_1, ..., N_n, C(n, k))
in the orthonormal coordinate frame. Derivatives are centered differences
of order 2 or 4 built from np.roll, so every operator is a local, exactly
periodic stencil and summation by parts holds to roundoff.

Sign conventions (orthonormal frame, B[i][j] = β(e_i, e_j)):
    K = G_β⁻¹,  ω = K·B,  v = (det G_β)^{1/4}
    (δ_β α) = −Σ_{i,a} K_ai i(e_a) ∂_i α
    H_b = Σ_a ∂_a(v ω_ab)                  divergence path
    H_b = −v Σ_c K_bc (δ_E E)_c            pointwise path
    dV⁰/dt = −⟨ȧ, H⟩_{L²}, so the descent update is a ← a + τH.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from itertools import permutations, product
from pathlib import Path

import numpy as np

import pointwise_algebra as pa
from exterior_g2 import basis, basis_index, coeffs_to_matrix, interior_table, matrix_to_coeffs, permutation_sign

logger = logging.getLogger(__name__)

MAX_FIELD_DIM = 4
MIN_POINTS = 8
DEFAULT_TOL_CONSTANT = 50.0
DESCENT_SLACK = 1e-12
SPECTRAL_FLOOR = 1e-8
SNAPSHOT_MAGIC = "mincon-field v1"


class FieldError(ValueError):
    pass


class GridError(FieldError):
    pass


class DegreeError(FieldError):
    pass


class ConservationError(FieldError):
    """The 2-form does not satisfy a conservation law within tolerance."""


# ---------------------------------------------------------------------------
# Grid and differencing scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusGrid:
    sizes: tuple
    lengths: tuple

    def __post_init__(self):
        sizes = tuple(int(N) for N in self.sizes)
        lengths = tuple(float(L) for L in self.lengths)
        if not 1 <= len(sizes) <= MAX_FIELD_DIM:
            raise GridError(f"torus dimension {len(sizes)} outside [1, {MAX_FIELD_DIM}]")
        if len(lengths) != len(sizes):
            raise GridError(f"{len(sizes)} sizes but {len(lengths)} lengths")
        for N in sizes:
            if N < MIN_POINTS or N % 2:
                raise GridError(f"grid size {N} must be even and at least {MIN_POINTS}")
        for L in lengths:
            if not (math.isfinite(L) and L > 0):
                raise GridError(f"torus length {L} must be positive")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def square(cls, dim, size, length=2 * math.pi):
        return cls((size,) * dim, (length,) * dim)

    @property
    def dim(self):
        return len(self.sizes)

    @property
    def shape(self):
        return self.sizes

    @property
    def spacings(self):
        return tuple(L / N for L, N in zip(self.lengths, self.sizes))

    @property
    def max_spacing(self):
        return max(self.spacings)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacings))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def coordinates(self):
        axes = [np.arange(N) * h for N, h in zip(self.sizes, self.spacings)]
        return np.meshgrid(*axes, indexing="ij")

    def refined(self, factor=2):
        return TorusGrid(tuple(N * factor for N in self.sizes), self.lengths)


@dataclass(frozen=True)
class OperatorScheme:
    """Centered stencil order and the tolerance model tol(h) = C·h^order."""

    order: int = 4
    constant: float = DEFAULT_TOL_CONSTANT

    def __post_init__(self):
        if self.order not in (2, 4):
            raise FieldError(f"stencil order must be 2 or 4, got {self.order}")
        if self.constant <= 0:
            raise FieldError("tolerance constant must be positive")

    def derivative(self, values, axis, h):
        if self.order == 2:
            return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)
        return (
            -np.roll(values, -2, axis)
            + 8.0 * np.roll(values, -1, axis)
            - 8.0 * np.roll(values, 1, axis)
            + np.roll(values, 2, axis)
        ) / (12.0 * h)

    def modified_wavenumber(self, k, h):
        """Exact response of the stencil to exp(ikx)."""
        if self.order == 2:
            return np.sin(k * h) / h
        return (8.0 * np.sin(k * h) - np.sin(2.0 * k * h)) / (6.0 * h)

    def tolerance(self, grid, *fields):
        """
        C·(k·h)^order for k ≥ 1 the largest axis wavenumber carrying spectral
        weight in any of the given fields; plain C·h^order without fields.
        """
        k = max((content_wavenumber(f) for f in fields), default=1.0)
        return self.constant * (k * grid.max_spacing) ** self.order


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FormField:
    grid: TorusGrid
    degree: int
    components: np.ndarray

    def __post_init__(self):
        n = self.grid.dim
        if not 0 <= self.degree <= n:
            raise DegreeError(f"degree {self.degree} outside [0, {n}]")
        comps = np.asarray(self.components, dtype=float)
        expected = self.grid.shape + (math.comb(n, self.degree),)
        if comps.shape != expected:
            raise FieldError(f"components have shape {comps.shape}, expected {expected}")
        if not np.all(np.isfinite(comps)):
            raise FieldError("field contains non-finite values")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zeros(cls, grid, degree):
        return cls(grid, degree, np.zeros(grid.shape + (math.comb(grid.dim, degree),)))

    @classmethod
    def from_functions(cls, grid, degree, functions):
        """functions maps 1-based labels ('12', (1, 2)) to callables of the coordinate arrays."""
        comps = np.zeros(grid.shape + (math.comb(grid.dim, degree),))
        index = basis_index(grid.dim, degree)
        coords = grid.coordinates()
        for label, func in functions.items():
            digits = [int(ch) for ch in label] if isinstance(label, str) else list(label)
            I = tuple(sorted(d - 1 for d in digits))
            sign = permutation_sign(digits) if digits else 1
            comps[..., index[I]] += sign * np.broadcast_to(func(*coords), grid.shape)
        return cls(grid, degree, comps)

    @classmethod
    def constant(cls, grid, degree, values):
        values = np.asarray(values, dtype=float)
        return cls(grid, degree, np.broadcast_to(values, grid.shape + values.shape).copy())

    @classmethod
    def from_matrix(cls, grid, matrices):
        return cls(grid, 2, matrix_to_coeffs(matrices))

    @property
    def ncomp(self):
        return self.components.shape[-1]

    def matrix(self):
        if self.degree != 2:
            raise DegreeError("only 2-form fields have coefficient matrices")
        return coeffs_to_matrix(self.components, self.grid.dim)

    def component(self, label):
        digits = [int(ch) for ch in label] if isinstance(label, str) else list(label)
        I = tuple(sorted(d - 1 for d in digits))
        return permutation_sign(digits) * self.components[..., basis_index(self.grid.dim, self.degree)[I]]

    def max_norm(self):
        return float(np.abs(self.components).max(initial=0.0))

    def integral(self):
        return self.components.reshape(-1, self.ncomp).sum(axis=0) * self.grid.cell_volume

    def _compatible(self, other):
        if self.grid != other.grid or self.degree != other.degree:
            raise FieldError("fields live on different grids or degrees")

    def __add__(self, other):
        self._compatible(other)
        return FormField(self.grid, self.degree, self.components + other.components)

    def __sub__(self, other):
        self._compatible(other)
        return FormField(self.grid, self.degree, self.components - other.components)

    def __mul__(self, scalar):
        return FormField(self.grid, self.degree, self.components * float(scalar))

    __rmul__ = __mul__


def _same_grid(*fields):
    grids = {f.grid for f in fields}
    if len(grids) != 1:
        raise GridError("fields are defined on different grids")


def l2_inner(a, b):
    a._compatible(b)
    return float(np.sum(a.components * b.components) * a.grid.cell_volume)


def content_wavenumber(f):
    """Largest axis wavenumber |k_i| whose Fourier weight exceeds SPECTRAL_FLOOR of the peak, at least 1."""
    grid = f.grid
    spectrum = np.abs(np.fft.fftn(f.components, axes=tuple(range(grid.dim))))
    peak = float(spectrum.max())
    if peak == 0.0:
        return 1.0
    present = spectrum > SPECTRAL_FLOOR * peak
    k = 1.0
    for axis, (N, h) in enumerate(zip(grid.sizes, grid.spacings)):
        others = tuple(i for i in range(present.ndim) if i != axis)
        along = present.any(axis=others)
        wavenumbers = 2.0 * math.pi * np.abs(np.fft.fftfreq(N, d=h))
        k = max(k, float(wavenumbers[along].max()))
    return k


def band_limited_field(grid, degree, rng, modes=1, amplitude=0.5):
    """Random trigonometric field with wave numbers |k_i| ≤ modes, scaled to peak value `amplitude`."""
    coords = grid.coordinates()
    wavevectors = [k for k in product(range(-modes, modes + 1), repeat=grid.dim) if any(k)]
    ncomp = math.comb(grid.dim, degree)
    comps = np.zeros(grid.shape + (ncomp,))
    for c in range(ncomp):
        for k in wavevectors:
            phase = sum(2.0 * math.pi * kj * x / L for kj, x, L in zip(k, coords, grid.lengths))
            a, b = rng.uniform(-1.0, 1.0, size=2)
            comps[..., c] += a * np.cos(phase) + b * np.sin(phase)
    peak = float(np.abs(comps).max())
    if peak > 0.0:
        comps *= amplitude / peak
    return FormField(grid, degree, comps)


# ---------------------------------------------------------------------------
# Differential operators
# ---------------------------------------------------------------------------

def _gradients(values, grid, scheme):
    """∂_i of a component-last array for every axis i, stacked on a new leading axis."""
    return np.stack([scheme.derivative(values, i, h) for i, h in enumerate(grid.spacings)])


def ext_d(f, scheme=OperatorScheme()):
    """(df)_J = Σ_p (−1)^p ∂_{j_p} f_{J∖j_p}."""
    n = f.grid.dim
    k = f.degree
    if k >= n:
        raise DegreeError(f"d of a degree-{k} form in dimension {n} vanishes identically")
    source = basis_index(n, k)
    D = _gradients(f.components, f.grid, scheme)
    out = np.zeros(f.grid.shape + (math.comb(n, k + 1),))
    for position, J in enumerate(basis(n, k + 1)):
        for p, j in enumerate(J):
            sign = -1.0 if p % 2 else 1.0
            out[..., position] += sign * D[j][..., source[J[:p] + J[p + 1:]]]
    return FormField(f.grid, k + 1, out)


def delta_beta(beta, alpha, scheme=OperatorScheme(), K=None):
    """δ_β α = −Σ_{i,a} K_ai i(e_a) ∂_i α."""
    _same_grid(beta, alpha)
    if alpha.degree == 0:
        raise DegreeError("δ_β of a function is undefined")
    n = alpha.grid.dim
    if K is None:
        K = pa.g_inverse(beta.matrix())
    D = _gradients(alpha.components, alpha.grid, scheme)
    weighted = np.einsum("...ai,i...c->...ac", K, D)
    vec, src, signs, scatter = interior_table(n, alpha.degree)
    out = -(signs * weighted[..., vec, src]) @ scatter
    return FormField(alpha.grid, alpha.degree - 1, out)


def laplace_beta(beta, f, scheme=OperatorScheme()):
    """Δ_β = dδ_β + δ_β d."""
    n = f.grid.dim
    K = pa.g_inverse(beta.matrix())
    total = FormField.zeros(f.grid, f.degree)
    if f.degree >= 1:
        total = total + ext_d(delta_beta(beta, f, scheme, K), scheme)
    if f.degree < n:
        total = total + delta_beta(beta, ext_d(f, scheme), scheme, K)
    return total


def volume_field(beta):
    return pa.volume_from_matrix(beta.matrix())


def div_stress_direct(beta, scheme=OperatorScheme()):
    """(div S)_b = Σ_i ∂_i(v K_ib); the −g part of S is parallel."""
    B = beta.matrix()
    weighted = volume_field(beta)[..., None, None] * pa.g_inverse(B)
    grid = beta.grid
    out = sum(scheme.derivative(weighted[..., i, :], i, h) for i, h in enumerate(grid.spacings))
    return FormField(grid, 1, out)


def _antisymmetric_tensor(field3):
    """Full T[q, i, p] from the components of a 3-form field."""
    n = field3.grid.dim
    T = np.zeros(field3.grid.shape + (n, n, n))
    for position, I in enumerate(basis(n, 3)):
        for perm in permutations(I):
            T[(...,) + perm] = permutation_sign(perm) * field3.components[..., position]
    return T


def div_stress(beta, scheme=OperatorScheme()):
    """
    Divergence of S assembled from dβ and δ_ββ:

        (div S)_b = v·[Σ_q K_bq ⟨i(e_q)dβ, ω⟩ + Σ_q ω_bq (δ_ββ)_q]
    """
    B = beta.matrix()
    K = pa.g_inverse(B)
    omega = K @ B
    v = volume_field(beta)
    n = beta.grid.dim
    codiff = delta_beta(beta, beta, scheme, K).components
    total = np.einsum("...bq,...q->...b", omega, codiff)
    if n >= 3:
        T = _antisymmetric_tensor(ext_d(beta, scheme))
        contraction = 0.5 * np.einsum("...qip,...ip->...q", T, omega)
        total = total + np.einsum("...bq,...q->...b", K, contraction)
    return FormField(beta.grid, 1, v[..., None] * total)


def div_stress_agreement(beta, scheme=OperatorScheme()):
    residual = (div_stress(beta, scheme) - div_stress_direct(beta, scheme)).max_norm()
    tol = scheme.tolerance(beta.grid, beta)
    return {"residual": residual, "tolerance": tol, "pass": bool(residual <= tol)}


def dd_residual(f, scheme=OperatorScheme()):
    """‖d(d f)‖∞; zero for forms of degree ≥ n − 1."""
    if f.degree + 2 > f.grid.dim:
        return 0.0
    return ext_d(ext_d(f, scheme), scheme).max_norm()


def delta_prime(beta, alpha, scheme=OperatorScheme()):
    """δ′_β α = δ_β α − v⁻¹ Σ_b (div S)_b α_b for a 1-form α."""
    if alpha.degree != 1:
        raise DegreeError("δ′_β is implemented on 1-forms")
    correction = np.sum(div_stress_direct(beta, scheme).components * alpha.components, axis=-1)
    base = delta_beta(beta, alpha, scheme)
    return FormField(alpha.grid, 0, base.components - (correction / volume_field(beta))[..., None])


def conservation_residual(beta, scheme=OperatorScheme()):
    closed = ext_d(beta, scheme).max_norm() if beta.grid.dim >= 3 else 0.0
    return {
        "closed": closed,
        "co_closed": delta_beta(beta, beta, scheme).max_norm(),
        "divergence": div_stress(beta, scheme).max_norm(),
    }


def _is_conserved(beta, scheme):
    tol = scheme.tolerance(beta.grid, beta)
    residual = conservation_residual(beta, scheme)
    return residual["divergence"] <= tol, residual


def weighted_divergence_residual(beta, alpha, scheme=OperatorScheme()):
    """|∫(δ_βα)·v·vol|, normalised by ∫|α|·v·vol."""
    v = volume_field(beta)
    cell = beta.grid.cell_volume
    value = float(np.sum(delta_beta(beta, alpha, scheme).components[..., 0] * v) * cell)
    scale = max(1.0, float(np.sum(np.linalg.norm(alpha.components, axis=-1) * v) * cell))
    return {"residual": abs(value), "scale": scale, "tolerance": scheme.tolerance(beta.grid, beta, alpha)}


def _gradient_pairing(beta, f1, f2, scheme):
    """∫⟨df₁, (G⁻¹)*df₂⟩ v vol and a magnitude scale for it."""
    K = pa.g_inverse(beta.matrix())
    v = volume_field(beta)
    g1 = ext_d(f1, scheme).components
    g2 = ext_d(f2, scheme).components
    cell = beta.grid.cell_volume
    value = float(np.sum(np.einsum("...a,...ab,...b->...", g1, K, g2) * v) * cell)
    scale = max(1.0, float(np.sum(np.linalg.norm(g1, axis=-1) * np.linalg.norm(g2, axis=-1) * v) * cell))
    return value, scale


def _weighted_pairing(beta, lhs, f):
    return float(np.sum(lhs.components[..., 0] * f.components[..., 0] * volume_field(beta)) * beta.grid.cell_volume)


def ibp_check(beta, f1, f2, scheme=OperatorScheme()):
    """∫(Δ_βf₁)f₂ v = ∫⟨df₁, (G⁻¹)*df₂⟩ v = ∫f₁(Δ_βf₂) v for conserved β."""
    _same_grid(beta, f1, f2)
    conserved, residual = _is_conserved(beta, scheme)
    if not conserved:
        raise ConservationError(f"β does not satisfy a conservation law: ‖div S‖∞ = {residual['divergence']:.3e}")
    middle, scale = _gradient_pairing(beta, f1, f2, scheme)
    lhs = _weighted_pairing(beta, laplace_beta(beta, f1, scheme), f2)
    swapped = _weighted_pairing(beta, laplace_beta(beta, f2, scheme), f1)
    tol = scheme.tolerance(beta.grid, beta, f1, f2)
    report = {
        "middle": middle,
        "residual": abs(lhs - middle) / scale,
        "swapped_residual": abs(swapped - middle) / scale,
        "tolerance": tol,
    }
    report["pass"] = bool(report["residual"] <= tol and report["swapped_residual"] <= tol)
    return report


def ibp_prime_residual(beta, f1, f2, scheme=OperatorScheme()):
    """Same identity with δ′_β, valid for any β."""
    _same_grid(beta, f1, f2)
    middle, scale = _gradient_pairing(beta, f1, f2, scheme)
    lhs = _weighted_pairing(beta, delta_prime(beta, ext_d(f1, scheme), scheme), f2)
    swapped = _weighted_pairing(beta, delta_prime(beta, ext_d(f2, scheme), scheme), f1)
    tol = scheme.tolerance(beta.grid, beta, f1, f2)
    report = {
        "middle": middle,
        "residual": abs(lhs - middle) / scale,
        "swapped_residual": abs(swapped - middle) / scale,
        "tolerance": tol,
    }
    report["pass"] = bool(report["residual"] <= tol and report["swapped_residual"] <= tol)
    return report


def weitzenbock_check(beta, alpha, scheme=OperatorScheme(), include_first_order=True):
    """
    Flat-base Weitzenböck identity for a 1-form:

        (Δ_β α)_a = −Σ_ij K_ij ∂_i∂_j α_a − Σ_{j,p} (∂_a K)_pj ∂_j α_p

    with ∂_a K = K(∂_aB·B + B·∂_aB)K. Dropping the second sum is the
    sensitivity control.
    """
    _same_grid(beta, alpha)
    if alpha.degree != 1:
        raise DegreeError("the Weitzenböck check is implemented for 1-forms")
    grid = alpha.grid
    B = beta.matrix()
    K = pa.g_inverse(B)
    lhs = laplace_beta(beta, alpha, scheme).components
    D = _gradients(alpha.components, grid, scheme)
    DD = np.stack([_gradients(D[j], grid, scheme) for j in range(grid.dim)], axis=1)
    rhs = -np.einsum("...ij,ij...a->...a", K, DD)
    if include_first_order:
        dB = _gradients(B, grid, scheme)
        dK = np.stack([K @ (dB[i] @ B + B @ dB[i]) @ K for i in range(grid.dim)], axis=-3)
        rhs = rhs - np.einsum("...apj,j...p->...a", dK, D)
    residual = float(np.abs(lhs - rhs).max())
    scale = max(1.0, float(np.abs(lhs).max()))
    tol = scheme.tolerance(grid, beta, alpha)
    return {"residual": residual / scale, "tolerance": tol, "pass": bool(residual / scale <= tol)}


# ---------------------------------------------------------------------------
# Connections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineConnection:
    """∇ = ∇₀ + √−1·a with curvature E = E₀ + da, E₀ constant."""

    grid: TorusGrid
    base: np.ndarray
    potential: FormField
    integral: bool = False

    def __post_init__(self):
        n = self.grid.dim
        base = np.asarray(self.base, dtype=float).reshape(-1)
        if base.size != math.comb(n, 2):
            raise FieldError(f"base curvature needs {math.comb(n, 2)} coefficients, got {base.size}")
        if self.potential.degree != 1 or self.potential.grid != self.grid:
            raise FieldError("potential must be a 1-form on the connection's grid")
        if self.integral:
            for position, (i, j) in enumerate(basis(n, 2)):
                flux = base[position] * self.grid.lengths[i] * self.grid.lengths[j] / (2.0 * math.pi)
                if abs(flux - round(flux)) > 1e-9:
                    raise FieldError(f"base flux through the ({i + 1},{j + 1}) torus is not 2π-integral")
        object.__setattr__(self, "base", base)

    @classmethod
    def flat(cls, grid):
        return cls(grid, np.zeros(math.comb(grid.dim, 2)), FormField.zeros(grid, 1))

    @classmethod
    def with_integral_base(cls, grid, integers, potential=None):
        """E₀ with flux 2π·n_ij through each coordinate 2-torus."""
        integers = np.asarray(integers, dtype=float)
        base = np.array([
            2.0 * math.pi * integers[position] / (grid.lengths[i] * grid.lengths[j])
            for position, (i, j) in enumerate(basis(grid.dim, 2))
        ])
        return cls(grid, base, potential or FormField.zeros(grid, 1), integral=True)

    def curvature(self, scheme=OperatorScheme()):
        da = ext_d(self.potential, scheme)
        return FormField(self.grid, 2, da.components + self.base)

    def with_potential(self, potential):
        return LineConnection(self.grid, self.base, potential, self.integral)

    def gauge_shift(self, constant):
        """Add a closed (constant) 1-form to the potential."""
        return self.with_potential(self.potential + FormField.constant(self.grid, 1, constant))


def _scaled_curvature(c, scheme, radius):
    E = c.curvature(scheme)
    return E * (1.0 / radius ** 2) if radius != 1.0 else E


def mean_curvature(c, scheme=OperatorScheme(), path="divergence", radius=1.0):
    """
    H(∇) in the metric r²g, with E rescaled to E/r².

    path="divergence": H = −d*(v ω); path="pointwise": H = −v K δ_E E.
    The divergence path is the exact discrete gradient of volume_functionals.
    """
    E = _scaled_curvature(c, scheme, radius)
    B = E.matrix()
    K = pa.g_inverse(B)
    v = pa.volume_from_matrix(B)
    if path == "divergence":
        flux = v[..., None, None] * (K @ B)
        out = sum(scheme.derivative(flux[..., a, :], a, h) for a, h in enumerate(c.grid.spacings))
    elif path == "pointwise":
        codiff = delta_beta(E, E, scheme, K).components
        out = -v[..., None] * np.einsum("...bc,...c->...b", K, codiff)
    else:
        raise FieldError(f"unknown mean curvature path {path!r}")
    return FormField(c.grid, 1, out)


def mean_curvature_agreement(c, scheme=OperatorScheme(), radius=1.0):
    """max |H_divergence − H_pointwise| against the scheme tolerance."""
    divergence = mean_curvature(c, scheme, "divergence", radius)
    pointwise = mean_curvature(c, scheme, "pointwise", radius)
    residual = (divergence - pointwise).max_norm()
    tol = scheme.tolerance(c.grid, _scaled_curvature(c, scheme, radius))
    return {"residual": residual, "tolerance": tol, "pass": bool(residual <= tol)}


def volume_functionals(c, scheme=OperatorScheme(), radius=1.0):
    """V and V⁰ by cell sums; in the metric r²g with V0_normalized = r^{4−n}·V⁰."""
    E = _scaled_curvature(c, scheme, radius)
    v = volume_field(E)
    n = c.grid.dim
    measure = c.grid.cell_volume * radius ** n
    V = float(np.sum(v) * measure)
    V0 = float(np.sum(v - 1.0) * measure)
    return {"V": V, "V0": V0, "V0_normalized": V0 * radius ** (4 - n)}


def curvature_laplacian(c, scheme=OperatorScheme()):
    """Δ_∇E_∇, which vanishes when ∇ is minimal."""
    E = c.curvature(scheme)
    return laplace_beta(E, E, scheme)


def curvature_deviation(c, scheme=OperatorScheme()):
    comps = c.curvature(scheme).components
    return float(np.abs(comps - comps.reshape(-1, comps.shape[-1]).mean(axis=0)).max())


def minimality_report(c, scheme=OperatorScheme()):
    """Both sides of 'minimal ⇒ Δ_∇E_∇ = 0'; nothing is asserted about the converse."""
    return {
        "Hmax": mean_curvature(c, scheme).max_norm(),
        "laplacian_max": curvature_laplacian(c, scheme).max_norm(),
        "tolerance": scheme.tolerance(c.grid, c.curvature(scheme)),
    }


def observed_order(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def first_variation_check(c, b, t_list, scheme=OperatorScheme()):
    """
    Central difference quotients of V⁰ along a ↦ a ± t·b against −⟨b, H⟩.

    Returns:
        dict with the target slope, one row per t, and the fitted order
        (None when every error is at roundoff level).
    """
    t_list = [float(t) for t in t_list]
    if not t_list or any(t <= 0 for t in t_list) or any(t1 <= t2 for t1, t2 in zip(t_list, t_list[1:])):
        raise FieldError("t_list must be positive and strictly decreasing")
    if b.degree != 1:
        raise DegreeError("variations of the potential are 1-forms")
    target = -l2_inner(b, mean_curvature(c, scheme))
    base_v0 = volume_functionals(c, scheme)["V0"]
    rows = []
    for t in t_list:
        plus = volume_functionals(c.with_potential(c.potential + b * t), scheme)["V0"]
        minus = volume_functionals(c.with_potential(c.potential - b * t), scheme)["V0"]
        quotient = (plus - minus) / (2.0 * t)
        rows.append({"t": t, "quotient": quotient, "error": abs(quotient - target)})
    floor = 1e-13 * max(1.0, abs(base_v0)) / min(t_list)
    usable = [row for row in rows if row["error"] > floor]
    order = observed_order([r["t"] for r in usable], [r["error"] for r in usable]) if len(usable) >= 2 else None
    return {"target": target, "rows": rows, "order": order}


@dataclass
class FlowTrajectory:
    """
    Per-step log of gradient_flow.

    Every trial gets a row. On a rejected row V0 is the rejected trial's value
    and Hmax the incumbent's, so V0 is monotone only along accepted rows.
    """

    rows: list = field(default_factory=list)
    final: LineConnection = None
    converged: bool = False
    accepted_steps: int = 0
    initial_deviation: float = 0.0
    final_deviation: float = 0.0

    CSV_COLUMNS = ("step", "tau", "V0", "Hmax", "accepted")

    @property
    def descent_holds(self):
        accepted = [row["V0"] for row in self.rows if row["accepted"]]
        return all(b <= a * (1.0 + DESCENT_SLACK) + 1e-300 for a, b in zip(accepted, accepted[1:]))

    def summary(self):
        accepted = [row for row in self.rows if row["accepted"]]
        last = accepted[-1] if accepted else {}
        return {
            "steps": len(self.rows) - 1,
            "accepted_steps": self.accepted_steps,
            "converged": self.converged,
            "descent": self.descent_holds,
            "V0": last.get("V0"),
            "V0_normalized": last.get("V0_normalized"),
            "Hmax": last.get("Hmax"),
            "initial_deviation": self.initial_deviation,
            "final_deviation": self.final_deviation,
            "deviation_ratio": self.final_deviation / self.initial_deviation if self.initial_deviation > 0 else None,
        }


def gradient_flow(c, tau, max_steps, radius=1.0, stop_tol=1e-8, scheme=OperatorScheme(), min_tau=1e-12):
    """
    Explicit Euler descent a ← a + τ·H_r with step halving on V⁰ increase.

    Non-convergence is reported in the trajectory, never raised.
    """
    if tau <= 0:
        raise FieldError(f"step τ must be positive, got {tau}")
    if radius < 1:
        raise FieldError(f"radius r must be at least 1, got {radius}")
    trajectory = FlowTrajectory(initial_deviation=curvature_deviation(c, scheme))
    current = c
    energy = volume_functionals(current, scheme, radius)
    H = mean_curvature(current, scheme, radius=radius)
    hmax = H.max_norm()
    trajectory.rows.append({"step": 0, "tau": tau, "V0": energy["V0"], "V0_normalized": energy["V0_normalized"],
                            "Hmax": hmax, "accepted": True})
    step = 0
    while step < max_steps and hmax >= stop_tol and tau >= min_tau:
        step += 1
        trial = current.with_potential(current.potential + H * tau)
        trial_energy = volume_functionals(trial, scheme, radius)
        accepted = trial_energy["V0"] <= energy["V0"] * (1.0 + DESCENT_SLACK)
        if accepted:
            current, energy = trial, trial_energy
            H = mean_curvature(current, scheme, radius=radius)
            hmax = H.max_norm()
            trajectory.accepted_steps += 1
        trajectory.rows.append({"step": step, "tau": tau, "V0": trial_energy["V0"],
                                "V0_normalized": trial_energy["V0_normalized"], "Hmax": hmax, "accepted": accepted})
        logger.debug("step %d tau=%.3g V0=%.12g Hmax=%.3e %s", step, tau, trial_energy["V0"], hmax,
                     "accepted" if accepted else "rejected")
        if not accepted:
            tau *= 0.5
    trajectory.final = current
    trajectory.converged = hmax < stop_tol
    trajectory.final_deviation = curvature_deviation(current, scheme)
    if trajectory.converged:
        logger.info("✓ flow converged after %d steps (Hmax %.3e)", step, hmax)
    else:
        logger.warning("⚠ flow stopped after %d steps without convergence (Hmax %.3e)", step, hmax)
    return trajectory


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def calibrate_tolerance(lengths, sizes=(16, 32, 64), order=4, safety=10.0):
    """
    Known-mode calibration of tol(h) = C·h^order.

    On each grid the derivative of sin(2πx/L) along every axis is compared
    with the analytic derivative (truncation error) and with the stencil's
    modified wavenumber (which it reproduces to roundoff).
    """
    scheme = OperatorScheme(order=order)
    rows = []
    for N in sizes:
        grid = TorusGrid((N,) * len(lengths), lengths)
        coords = grid.coordinates()
        error = 0.0
        modified = 0.0
        for axis, (x, L, h) in enumerate(zip(coords, grid.lengths, grid.spacings)):
            k = 2.0 * math.pi / L
            numeric = scheme.derivative(np.sin(k * x), axis, h)
            error = max(error, float(np.abs(numeric - k * np.cos(k * x)).max()))
            exact = scheme.modified_wavenumber(k, h) * np.cos(k * x)
            modified = max(modified, float(np.abs(numeric - exact).max()))
        rows.append({"N": N, "h": grid.max_spacing, "error": error, "modified_wavenumber_residual": modified})
    order_fit = observed_order([r["h"] for r in rows], [r["error"] for r in rows])
    constant = safety * max(r["error"] / r["h"] ** order for r in rows)
    report = {"order": order, "lengths": list(lengths), "rows": rows, "observed_order": order_fit,
              "constant": constant, "safety": safety}
    report["pass"] = bool(order_fit >= order - 0.3 and all(r["modified_wavenumber_residual"] <= 1e-10 for r in rows))
    return report


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def write_snapshot(path, f):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "{} n={} k={} N={} L={}".format(
        SNAPSHOT_MAGIC,
        f.grid.dim,
        f.degree,
        ",".join(str(N) for N in f.grid.sizes),
        ",".join(repr(L) for L in f.grid.lengths),
    )
    with path.open("w", encoding="utf-8") as handle:
        handle.write(header + "\n")
        np.savetxt(handle, f.components.reshape(-1, f.ncomp), fmt="%.17g")
    return path


_HEADER = re.compile(r"^mincon-field v1 n=(\d+) k=(\d+) N=([\d,]+) L=([^\s]+)$")


def read_snapshot(path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().strip()
        match = _HEADER.match(header)
        if not match:
            raise FieldError(f"{path} is not a {SNAPSHOT_MAGIC} snapshot")
        n, k = int(match.group(1)), int(match.group(2))
        sizes = tuple(int(N) for N in match.group(3).split(","))
        lengths = tuple(float(L) for L in match.group(4).split(","))
        data = np.loadtxt(handle, ndmin=2)
    grid = TorusGrid(sizes, lengths)
    if grid.dim != n:
        raise FieldError(f"snapshot header says n={n} but lists {grid.dim} sizes")
    return FormField(grid, k, data.reshape(grid.shape + (math.comb(n, k),)))


def format_flow_report(trajectory):
    summary = trajectory.summary()
    lines = ["🌊 Volume-decreasing flow"]
    lines.append(f"   steps: {summary['steps']} ({summary['accepted_steps']} accepted)")
    lines.append(f"   V0: {summary['V0']:.12g} | Hmax: {summary['Hmax']:.3e}")
    lines.append(f"   curvature deviation: {summary['initial_deviation']:.3e} → {summary['final_deviation']:.3e}")
    lines.append("   ✓ V0 non-increasing" if summary["descent"] else "   ✗ V0 increased on an accepted step")
    lines.append("   ✓ converged" if summary["converged"] else "   ⚠ not converged")
    return "\n".join(lines)
