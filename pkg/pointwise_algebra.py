"""
Pointwise linear algebra of a 2-form in an orthonormal frame.

A 2-form β at a point is stored as its skew coefficient matrix
B[i][j] = β(e_i, e_j). Everything here is a pure function of B: the
correction G_β = I − B², its inverse, the volume density (det G_β)^{1/4},
traces, Ξ, the stress-energy tensor, the canonical block form, and the
algebraic bounds used by the monotonicity formulas.

The lower-case array helpers (g_matrix, g_inverse, volume_from_matrix, ...)
accept stacks of matrices of shape (..., n, n) and are shared with the
field and monotonicity modules.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

MIN_DIM = 2
MAX_DIM = 8
ALGEBRA_TOL = 1e-10
BOUND_TOL = 1e-12
UNIT_TOL = 1e-12


class AlgebraError(ValueError):
    """Rejected input to a pointwise operation."""


class InvalidFormError(AlgebraError):
    pass


class EigensolverError(AlgebraError):
    """The symmetric eigensolver did not converge."""


class BoundDomainError(AlgebraError):
    pass


# ---------------------------------------------------------------------------
# Batched array helpers
# ---------------------------------------------------------------------------

def g_matrix(B):
    """G = I − B·B for a stack of skew matrices."""
    B = np.asarray(B, dtype=float)
    eye = np.eye(B.shape[-1])
    return eye - B @ B


def g_inverse(B):
    """G⁻¹, symmetrised; commutes with B."""
    K = np.linalg.inv(g_matrix(B))
    return 0.5 * (K + np.swapaxes(K, -1, -2))


def volume_from_matrix(B):
    """(det G)^{1/4} through the Cholesky factor G = L·Lᵀ."""
    L = np.linalg.cholesky(g_matrix(B))
    return np.sqrt(np.prod(np.diagonal(L, axis1=-2, axis2=-1), axis=-1))


def omega_matrix(B, K=None):
    """Coefficients of (G⁻¹∘β♯)^♭, which equal K·B and are skew."""
    if K is None:
        K = g_inverse(B)
    return K @ B


def trace_from_matrix(B):
    return np.trace(g_inverse(B), axis1=-2, axis2=-1)


def random_skew(rng, dim, scale=5.0, size=None):
    """Skew matrices with upper entries uniform in [−scale, scale]."""
    shape = (dim, dim) if size is None else (size, dim, dim)
    upper = np.triu(rng.uniform(-scale, scale, size=shape), k=1)
    return upper - np.swapaxes(upper, -1, -2)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoFormPoint:
    """β at a single point: skew coefficient matrix in an orthonormal frame."""

    coeffs: np.ndarray

    def __post_init__(self):
        B = np.array(self.coeffs, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise InvalidFormError(f"coefficients must be a square matrix, got shape {B.shape}")
        if not MIN_DIM <= B.shape[0] <= MAX_DIM:
            raise InvalidFormError(f"dimension {B.shape[0]} outside [{MIN_DIM}, {MAX_DIM}]")
        if not np.all(np.isfinite(B)):
            raise InvalidFormError("coefficients must be finite")
        if not np.array_equal(B, -B.T):
            raise InvalidFormError("coefficient matrix is not skew-symmetric")
        B.setflags(write=False)
        object.__setattr__(self, "coeffs", B)

    @property
    def dim(self):
        return self.coeffs.shape[0]

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((dim, dim)))

    @classmethod
    def from_blocks(cls, lambdas, dim):
        """Σ λ_j e^{2j−1}∧e^{2j} in the standard frame."""
        B = np.zeros((dim, dim))
        if 2 * len(lambdas) > dim:
            raise InvalidFormError(f"{len(lambdas)} blocks do not fit in dimension {dim}")
        for j, lam in enumerate(lambdas):
            B[2 * j, 2 * j + 1] = lam
            B[2 * j + 1, 2 * j] = -lam
        return cls(B)

    @classmethod
    def from_terms(cls, dim, terms):
        """Build from {(i, j): value} with 1-based indices, i < j."""
        B = np.zeros((dim, dim))
        for (i, j), value in terms.items():
            B[i - 1, j - 1] += value
            B[j - 1, i - 1] -= value
        return cls(B)

    @classmethod
    def skew_part(cls, matrix):
        M = np.asarray(matrix, dtype=float)
        return cls(0.5 * (M - M.T))

    @classmethod
    def random(cls, rng, dim, scale=5.0):
        return cls(random_skew(rng, dim, scale))


@dataclass(frozen=True)
class SkewSpectrum:
    """Canonical form β = Σ λ_j f^{2j−1}∧f^{2j} with μ_j = 1 + λ_j²."""

    dim: int
    lambdas: tuple
    frame: np.ndarray
    residual: float = 0.0
    mus: tuple = field(init=False)

    def __post_init__(self):
        lambdas = tuple(float(lam) for lam in self.lambdas)
        if any(lam < 0 for lam in lambdas):
            raise InvalidFormError("block rates must be nonnegative")
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "mus", tuple(1.0 + lam * lam for lam in lambdas))

    @classmethod
    def from_mus(cls, mus, dim):
        """Spectrum in the standard frame with prescribed μ_j ≥ 1."""
        mus = np.asarray(mus, dtype=float)
        if np.any(mus < 1.0):
            raise BoundDomainError("μ_j must be at least 1")
        lambdas = np.sort(np.sqrt(mus - 1.0))[::-1]
        return cls(dim=dim, lambdas=tuple(lambdas), frame=np.eye(dim))

    @property
    def m(self):
        return len(self.lambdas)

    @property
    def volume(self):
        return float(np.prod(np.sqrt(self.mus)))

    @property
    def trace(self):
        return (self.dim - 2 * self.m) + sum(2.0 / mu for mu in self.mus)

    def block_matrix(self):
        return TwoFormPoint.from_blocks(self.lambdas, self.dim).coeffs

    def reconstruct(self):
        return self.frame @ self.block_matrix() @ self.frame.T


@dataclass(frozen=True)
class StressTensorPoint:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.matrix, dtype=float)
        if not np.allclose(S, S.T, rtol=0.0, atol=ALGEBRA_TOL * (1.0 + np.abs(S).max())):
            raise InvalidFormError("stress-energy tensor must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (S + S.T))


@dataclass(frozen=True)
class BoundAudit:
    lhs: float
    rhs: float
    holds: bool

    def as_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "holds": self.holds}


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def g_correction(beta):
    """G_β = id − β♯∘β♯."""
    G = g_matrix(beta.coeffs)
    return 0.5 * (G + G.T)


def volume_density(beta):
    """v(β) = (det G_β)^{1/4} ≥ 1."""
    return float(volume_from_matrix(beta.coeffs))


def trace_g_inverse(beta):
    return float(trace_from_matrix(beta.coeffs))


def xi(beta, v):
    """Ξ(β, v) = tr(G⁻¹) − g(G⁻¹v, v) for a unit vector v."""
    v = np.asarray(v, dtype=float)
    if v.shape != (beta.dim,):
        raise AlgebraError(f"vector of shape {v.shape} does not match dimension {beta.dim}")
    if abs(np.dot(v, v) - 1.0) > UNIT_TOL:
        raise AlgebraError(f"xi needs a unit vector, |v|² = {np.dot(v, v)!r}")
    K = g_inverse(beta.coeffs)
    return float(np.trace(K) - v @ K @ v)


def stress_energy(beta):
    """S = −g + v·(G⁻¹)^♭."""
    K = g_inverse(beta.coeffs)
    S = -np.eye(beta.dim) + volume_density(beta) * K
    return StressTensorPoint(dim=beta.dim, matrix=S)


def skew_canonical(beta):
    """
    Orthonormal frame putting B into 2×2 blocks [[0, λ_j], [−λ_j, 0]].

    Blocks are peeled one at a time: on the B-invariant complement of the
    planes found so far, the top eigenvector u of BᵀB and its partner
    Bᵀu/λ span the next block.
    """
    B = beta.coeffs
    n = beta.dim
    m = n // 2
    scale = max(1.0, float(np.abs(B).max()))
    columns = []
    lambdas = []
    try:
        for _ in range(m):
            if columns:
                Q = linalg.null_space(np.column_stack(columns).T)
            else:
                Q = np.eye(n)
            Bc = Q.T @ B @ Q
            evals, evecs = linalg.eigh(Bc.T @ Bc)
            top = float(max(evals[-1], 0.0))
            lam = np.sqrt(top)
            if lam <= 1e-13 * scale:
                # remaining complement is numerically annihilated by B
                first, second = Q[:, 0], Q[:, 1]
                lam = float(first @ B @ second)
                if lam < 0:
                    second = -second
                    lam = -lam
            else:
                first = Q @ evecs[:, -1]
                second = B.T @ first / lam
                second /= np.linalg.norm(second)
                lam = float(first @ B @ second)
            columns.extend([first, second])
            lambdas.append(lam)
        if n % 2:
            rest = linalg.null_space(np.column_stack(columns).T) if columns else np.eye(n)
            columns.append(rest[:, 0])
    except (np.linalg.LinAlgError, linalg.LinAlgError) as exc:
        raise EigensolverError(f"canonical form failed: {exc}") from exc

    frame = np.column_stack(columns)
    order = np.argsort(-np.asarray(lambdas), kind="stable")
    if m:
        reordered = []
        for j in order:
            reordered.extend([frame[:, 2 * j], frame[:, 2 * j + 1]])
        if n % 2:
            reordered.append(frame[:, -1])
        frame = np.column_stack(reordered)
        lambdas = [lambdas[j] for j in order]
    spectrum = SkewSpectrum(dim=n, lambdas=tuple(lambdas), frame=frame)
    residual = float(np.abs(spectrum.reconstruct() - B).max())
    object.__setattr__(spectrum, "residual", residual)
    if residual > ALGEBRA_TOL * scale:
        raise EigensolverError(f"canonical form does not reconstruct β: residual {residual:.3e} (n={n})")
    return spectrum


def odd_bound_values(mus):
    """(lhs, rhs) of tr(G⁻¹) ≥ 1 + 2m/v for arrays of μ of shape (..., m)."""
    mus = np.asarray(mus, dtype=float)
    m = mus.shape[-1]
    lhs = 1.0 + np.sum(2.0 / mus, axis=-1)
    rhs = 1.0 + 2.0 * m / np.sqrt(np.prod(mus, axis=-1))
    return lhs, rhs


def odd_bound_audit(spectrum):
    """Evaluate the odd-dimension trace bound; reports, never asserts."""
    if spectrum.dim % 2 == 0:
        raise BoundDomainError(f"odd-dimension audit needs odd n, got {spectrum.dim}")
    lhs, rhs = odd_bound_values(spectrum.mus)
    return BoundAudit(lhs=float(lhs), rhs=float(rhs), holds=bool(lhs >= rhs - BOUND_TOL))


def even_bound_check(beta):
    """tr(G⁻¹)·v ≥ n."""
    return bool(trace_g_inverse(beta) * volume_density(beta) >= beta.dim - BOUND_TOL)


def even_bound_audit(beta):
    """Both forms of the trace-times-volume bound, for the record."""
    product = trace_g_inverse(beta) * volume_density(beta)
    m = beta.dim // 2
    return {
        "trace_volume": product,
        "bound_2m": 2 * m,
        "bound_n": beta.dim,
        "holds_2m": bool(product >= 2 * m - BOUND_TOL),
        "holds_n": bool(product >= beta.dim - BOUND_TOL),
    }


def volume_derivative(beta, dbeta):
    """Derivative of v along a variation Dβ: v·Σ_{a<c} ω_ac (Dβ)_ac."""
    dB = np.asarray(dbeta, dtype=float)
    omega = omega_matrix(beta.coeffs)
    return 0.5 * volume_density(beta) * float(np.sum(omega * dB))


def _density_under_metric(B, metric):
    # (v_g(β) − 1)·vol_g in coordinates where g is not the identity
    return np.sqrt(np.linalg.det(metric + B)) - np.sqrt(np.linalg.det(metric))


def metric_variation_check(beta, h, t=1e-4):
    """Central difference of the normalized density along g_t = I + t·h versus ⟨h, S⟩."""
    h = np.asarray(h, dtype=float)
    if h.shape != (beta.dim, beta.dim) or not np.allclose(h, h.T):
        raise AlgebraError("metric variation must be a symmetric matrix of the form's dimension")
    eye = np.eye(beta.dim)
    numeric = (
        _density_under_metric(beta.coeffs, eye + t * h)
        - _density_under_metric(beta.coeffs, eye - t * h)
    ) / (2.0 * t)
    predicted = 0.5 * float(np.sum(h * stress_energy(beta).matrix))
    return {"numeric": float(numeric), "predicted": predicted, "residual": abs(numeric - predicted)}


# ---------------------------------------------------------------------------
# Invariant suite
# ---------------------------------------------------------------------------

def _check(name, worst, limit, **extra):
    record = {"name": name, "worst": float(worst), "limit": float(limit), "pass": bool(worst <= limit)}
    record.update(extra)
    return record


def algebra_suite(rng, samples=1000, dims=range(MIN_DIM, MAX_DIM + 1), scale=5.0, unit_vectors=20):
    """
    Random-sample sweep of the pointwise identities.

    Returns (checks, audits): checks are asserted, audits are recorded only.
    """
    checks = []
    audits = []
    for n in dims:
        B = random_skew(rng, n, scale, size=samples)
        G = g_matrix(B)
        K = g_inverse(B)
        v = volume_from_matrix(B)
        tr = np.trace(K, axis1=-2, axis2=-1)
        eye = np.eye(n)

        min_eig = np.linalg.eigvalsh(G).min()
        checks.append(_check(f"G positive definite, min eigenvalue ≥ 1 (n={n})", 1.0 - min_eig, ALGEBRA_TOL))
        checks.append(_check(f"v ≥ 1 (n={n})", 1.0 - v.min(), ALGEBRA_TOL))
        checks.append(_check(f"tr(G⁻¹) ≤ n (n={n})", tr.max() - n, BOUND_TOL))

        vecs = rng.normal(size=(samples, unit_vectors, n))
        vecs /= np.linalg.norm(vecs, axis=-1, keepdims=True)
        quad = np.einsum("sui,sij,suj->su", vecs, K, vecs)
        xi_values = tr[:, None] - quad
        checks.append(_check(f"Ξ(β, v) ≥ 0 (n={n})", -xi_values.min(), BOUND_TOL))

        commute = np.abs(B @ K - K @ B).max()
        checks.append(_check(f"B·G⁻¹ = G⁻¹·B (n={n})", commute, ALGEBRA_TOL))
        identity = np.abs(B @ K @ B + eye - K).max()
        checks.append(_check(f"B·G⁻¹·B + I = G⁻¹ (n={n})", identity, ALGEBRA_TOL))
        KB = K @ B
        skew = np.abs(KB + np.swapaxes(KB, -1, -2)).max()
        checks.append(_check(f"G⁻¹∘β♯ skew (n={n})", skew, ALGEBRA_TOL))

        worst_product = 0.0
        worst_recon = 0.0
        worst_odd = 0.0
        for sample in B:
            spectrum = skew_canonical(TwoFormPoint(sample))
            det_v = volume_from_matrix(sample)
            worst_product = max(worst_product, abs(det_v - spectrum.volume) / spectrum.volume)
            worst_recon = max(worst_recon, spectrum.residual / max(1.0, np.abs(sample).max()))
            if n % 2 and n >= 5:
                audit = odd_bound_audit(spectrum)
                worst_odd = max(worst_odd, audit.rhs - audit.lhs)
        checks.append(_check(f"det volume = Π√μ_j (n={n})", worst_product, ALGEBRA_TOL))
        checks.append(_check(f"canonical form reconstruction (n={n})", worst_recon, ALGEBRA_TOL))
        if n % 2 and n >= 5:
            checks.append(_check(f"tr(G⁻¹) ≥ 1 + 2m/v (n={n})", worst_odd, BOUND_TOL))

        # β = 0 is the only point with v = 1
        near_one = np.abs(v - 1.0) <= ALGEBRA_TOL
        leak = np.abs(B[near_one]).max() if np.any(near_one) else 0.0
        checks.append(_check(f"v = 1 only at β = 0 (n={n})", leak, 1e-8))

        products = tr * v
        if n >= 4:
            checks.append(_check(f"tr(G⁻¹)·v ≥ n (n={n})", n - products.min(), BOUND_TOL))
        else:
            violations = int(np.sum(products < n - BOUND_TOL))
            violations_2m = int(np.sum(products < 2 * (n // 2) - BOUND_TOL))
            audits.append({
                "name": f"tr(G⁻¹)·v bound (n={n})",
                "samples": samples,
                "violations_n": violations,
                "violations_2m": violations_2m,
                "min_trace_volume": float(products.min()),
            })
            if violations:
                logger.warning("⚠ tr(G⁻¹)·v < %d on %d of %d samples (n=%d)", n, violations, samples, n)

    failed = [check["name"] for check in checks if not check["pass"]]
    if failed:
        logger.error("✗ pointwise algebra failures: %s", ", ".join(failed))
    else:
        logger.info("✓ pointwise algebra: %d checks passed", len(checks))
    return checks, audits
