"""
Graphs over a box and their connections on the product with a torus fiber.

A graph S = {(x, f(x))} with f: B ⊂ R^p → R^q induces the metric
g_ij = δ_ij + f^a_i f^a_j on B. On X = B × T^q the connection with
curvature E = Σ f^a_i dx^i ∧ dy^a is minimal exactly when the graph is.
Everything here is pointwise; the product space is never put on a grid.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import qmc

import pointwise_algebra as pa

logger = logging.getLogger(__name__)

CORRESPONDENCE_TOL = 1e-8
EQUIVALENCE_BAND = 5.0
SAMPLE_MARGIN = 4
METRIC_STEP = 1e-3


class GraphError(ValueError):
    pass


class DomainError(GraphError):
    """Evaluation point outside the usable part of the box."""


def _fourth_order_diff(values, axis, h):
    """Non-periodic 4th-order centered difference; the two outer rows on each side are NaN."""
    out = np.full(values.shape, np.nan)
    n = values.shape[axis]

    def part(start, stop):
        index = [slice(None)] * values.ndim
        index[axis] = slice(start, n + stop if stop <= 0 else stop)
        return values[tuple(index)]

    centre = [slice(None)] * values.ndim
    centre[axis] = slice(2, n - 2)
    out[tuple(centre)] = (-part(4, 0) + 8.0 * part(3, -1) - 8.0 * part(1, -3) + part(0, -4)) / (12.0 * h)
    return out


@dataclass(frozen=True)
class GraphMap:
    p: int
    q: int
    lower: tuple
    upper: tuple
    value: Callable
    gradient: Callable
    hessian: Callable
    name: str = "graph"
    nodes: tuple = None

    def __post_init__(self):
        lower = tuple(float(v) for v in np.broadcast_to(self.lower, (self.p,)))
        upper = tuple(float(v) for v in np.broadcast_to(self.upper, (self.p,)))
        if self.p < 1 or self.q < 1:
            raise GraphError(f"graph dimensions must be positive, got p={self.p}, q={self.q}")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise GraphError("box lower corner must lie below the upper corner")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    # -- families ---------------------------------------------------------

    @classmethod
    def linear(cls, slopes=((1.0,),), offset=0.0, lower=-2.0, upper=2.0):
        slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
        q, p = slopes.shape
        return cls(
            p, q, lower, upper,
            value=lambda x: slopes @ x + offset,
            gradient=lambda x: slopes.copy(),
            hessian=lambda x: np.zeros((q, p, p)),
            name="linear",
        )

    @classmethod
    def quadratic(cls, lower=-2.0, upper=2.0):
        """f = x²/2 over an interval."""
        return cls(
            1, 1, lower, upper,
            value=lambda x: np.array([0.5 * x[0] ** 2]),
            gradient=lambda x: np.array([[x[0]]]),
            hessian=lambda x: np.ones((1, 1, 1)),
            name="quadratic",
        )

    @classmethod
    def scherk(cls, half_width=0.45 * math.pi):
        """Scherk's surface f = log(cos x¹ / cos x²), minimal on its whole box."""

        def gradient(x):
            return np.array([[-math.tan(x[0]), math.tan(x[1])]])

        def hessian(x):
            return np.array([[[-1.0 / math.cos(x[0]) ** 2, 0.0], [0.0, 1.0 / math.cos(x[1]) ** 2]]])

        return cls(
            2, 1, -half_width, half_width,
            value=lambda x: np.array([math.log(math.cos(x[0]) / math.cos(x[1]))]),
            gradient=gradient,
            hessian=hessian,
            name="scherk",
        )

    @classmethod
    def custom(cls, coefficients, lower=-2.0, upper=2.0):
        """f = ½xᵀHx with the p×p Hessian given row-major."""
        coefficients = np.asarray(coefficients, dtype=float).ravel()
        p = math.isqrt(coefficients.size)
        if p < 1 or p * p != coefficients.size:
            raise GraphError(f"custom graph needs p² Hessian coefficients, got {coefficients.size}")
        H = coefficients.reshape(p, p)
        if not np.allclose(H, H.T):
            raise GraphError("custom Hessian must be symmetric")
        return cls(
            p, 1, lower, upper,
            value=lambda x: np.array([0.5 * x @ H @ x]),
            gradient=lambda x: (H @ x)[None, :],
            hessian=lambda x: H[None, :, :].copy(),
            name="custom",
        )

    @classmethod
    def from_samples(cls, values, lower, upper, name="sampled"):
        """
        Grid mode: values of shape (q, N_1, ..., N_p) on the closed box.

        Derivatives use 4th-order differences; evaluation is allowed only at
        nodes at least two stencil widths inside the box.
        """
        values = np.asarray(values, dtype=float)
        q, sizes = values.shape[0], values.shape[1:]
        p = len(sizes)
        lower_arr = np.broadcast_to(np.asarray(lower, dtype=float), (p,))
        upper_arr = np.broadcast_to(np.asarray(upper, dtype=float), (p,))
        if any(N < 2 * SAMPLE_MARGIN + 1 for N in sizes):
            raise GraphError(f"grid mode needs at least {2 * SAMPLE_MARGIN + 1} nodes per axis")
        h = (upper_arr - lower_arr) / (np.asarray(sizes) - 1)
        first = np.stack([_fourth_order_diff(values, i + 1, h[i]) for i in range(p)], axis=1)
        second = np.stack(
            [np.stack([_fourth_order_diff(first[:, i], j + 1, h[j]) for j in range(p)], axis=1) for i in range(p)],
            axis=1,
        )

        def locate(x):
            x = np.asarray(x, dtype=float)
            position = (x - lower_arr) / h
            index = np.rint(position).astype(int)
            if np.any(np.abs(position - index) > 1e-9):
                raise DomainError(f"{x} is not a grid node")
            if np.any(index < SAMPLE_MARGIN) or np.any(index > np.asarray(sizes) - 1 - SAMPLE_MARGIN):
                raise DomainError(f"{x} lies within {SAMPLE_MARGIN} nodes of the box boundary")
            return tuple(index)

        nodes = tuple(lower_arr[i] + h[i] * np.arange(SAMPLE_MARGIN, sizes[i] - SAMPLE_MARGIN) for i in range(p))
        return cls(
            p, q, tuple(lower_arr), tuple(upper_arr),
            value=lambda x: values[(slice(None),) + locate(x)],
            gradient=lambda x: first[(slice(None), slice(None)) + locate(x)],
            hessian=lambda x: second[(slice(None), slice(None), slice(None)) + locate(x)],
            name=name,
            nodes=nodes,
        )

    # -- evaluation -------------------------------------------------------

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise DomainError(f"point must have {self.p} coordinates, got shape {x.shape}")
        if np.any(x <= self.lower) or np.any(x >= self.upper):
            raise DomainError(f"{x} is outside the open box")
        return x

    def jet(self, x):
        x = self.check_point(x)
        return np.asarray(self.gradient(x), dtype=float), np.asarray(self.hessian(x), dtype=float)

    def sample_points(self, count, seed=0, shrink=0.9):
        """Sobol points in a shrunken box, or random usable nodes in grid mode."""
        if self.nodes is not None:
            rng = np.random.Generator(np.random.Philox(seed))
            return np.stack([rng.choice(axis, size=count) for axis in self.nodes], axis=-1)
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        middle = 0.5 * (lower + upper)
        half = 0.5 * shrink * (upper - lower)
        unit = qmc.Sobol(d=self.p, scramble=True, seed=seed).random(count)
        return middle + half * (2.0 * unit - 1.0)


# ---------------------------------------------------------------------------
# Graph geometry
# ---------------------------------------------------------------------------

def induced_metric(graph, x):
    F, _ = graph.jet(x)
    return np.eye(graph.p) + F.T @ F


def christoffel(graph, x):
    """Γ^k_ij = g^{kl} f^a_ij f^a_l."""
    F, H = graph.jet(x)
    g_inv = np.linalg.inv(np.eye(graph.p) + F.T @ F)
    return np.einsum("kl,aij,al->kij", g_inv, H, F)


def christoffel_from_metric(graph, x, h=METRIC_STEP):
    """Levi-Civita symbols from 4th-order differences of the induced metric."""
    x = graph.check_point(x)
    p = graph.p
    dg = np.zeros((p, p, p))
    for m in range(p):
        step = np.zeros(p)
        step[m] = h
        dg[m] = (
            -induced_metric(graph, x + 2 * step)
            + 8.0 * induced_metric(graph, x + step)
            - 8.0 * induced_metric(graph, x - step)
            + induced_metric(graph, x - 2 * step)
        ) / (12.0 * h)
    g_inv = np.linalg.inv(induced_metric(graph, x))
    # dg[i, j, l] = ∂_i g_jl
    lowered = 0.5 * (dg + np.swapaxes(dg, 0, 1) - np.transpose(dg, (1, 2, 0)))
    return np.einsum("kl,ijl->kij", g_inv, lowered)


def graph_minimality_residual(graph, x):
    """(g^{ij} f^a_ij)_a, zero exactly where the graph is minimal."""
    F, H = graph.jet(x)
    g_inv = np.linalg.inv(np.eye(graph.p) + F.T @ F)
    return np.einsum("ij,aij->a", g_inv, H)


# ---------------------------------------------------------------------------
# The transformed connection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FMConnection:
    """Curvature E = Σ f^a_i dx^i∧dy^a on B × T^q, coordinates (x, y)."""

    graph: GraphMap

    @property
    def dim(self):
        return self.graph.p + self.graph.q

    def curvature_matrix(self, x):
        F, _ = self.graph.jet(x)
        p = self.graph.p
        B = np.zeros((self.dim, self.dim))
        B[:p, p:] = F.T
        B[p:, :p] = -F
        return B

    def curvature_derivatives(self, x):
        """∂_{x^j}B for every j; y-derivatives vanish."""
        _, H = self.graph.jet(x)
        p = self.graph.p
        dB = np.zeros((p, self.dim, self.dim))
        for j in range(p):
            dB[j, :p, p:] = H[:, :, j].T
            dB[j, p:, :p] = -H[:, :, j]
        return dB

    def closedness_residual(self, x, h=METRIC_STEP):
        """max |∂_j f^a_i − ∂_i f^a_j| from differences of the gradient."""
        x = self.graph.check_point(x)
        p = self.graph.p
        jac = np.zeros((self.graph.q, p, p))
        for j in range(p):
            step = np.zeros(p)
            step[j] = h
            jac[:, :, j] = (
                -self.graph.jet(x + 2 * step)[0]
                + 8.0 * self.graph.jet(x + step)[0]
                - 8.0 * self.graph.jet(x - step)[0]
                + self.graph.jet(x - 2 * step)[0]
            ) / (12.0 * h)
        return float(np.abs(jac - np.swapaxes(jac, 1, 2)).max())


def fm_connection(graph):
    return FMConnection(graph)


def _codifferential_of_curvature(connection, x):
    """δ_∇E_∇ by (δβ)_b = −Σ K_ai ∂_i B_ab on the product."""
    B = connection.curvature_matrix(x)
    K = pa.g_inverse(B)
    p = connection.graph.p
    dB = connection.curvature_derivatives(x)
    return -np.einsum("ai,iab->b", K[:, :p], dB), B, K


def fm_delta_check(graph, x):
    """δ_∇E_∇ two ways: the generic operator on B × T^q and −g^{ij}f^a_ij."""
    connection = fm_connection(graph)
    w, _, _ = _codifferential_of_curvature(connection, x)
    closed_form = -graph_minimality_residual(graph, x)
    generic = w[graph.p:]
    residual = max(float(np.abs(generic - closed_form).max()), float(np.abs(w[: graph.p]).max(initial=0.0)))
    return {"generic": generic, "closed_form": closed_form, "residual": residual}


@dataclass(frozen=True)
class OneFormJet:
    """A 1-form on B with its Jacobian J[i, j] = ∂_j α_i."""

    value: Callable
    jacobian: Callable

    @classmethod
    def linear(cls, constant, matrix):
        constant = np.asarray(constant, dtype=float)
        matrix = np.asarray(matrix, dtype=float)
        return cls(lambda x: constant + matrix @ x, lambda x: matrix.copy())

    @classmethod
    def random(cls, p, rng):
        """α_i = c_i + M_ij x^j + s_i sin(k·x)."""
        c = rng.uniform(-1.0, 1.0, size=p)
        M = rng.uniform(-1.0, 1.0, size=(p, p))
        s = rng.uniform(-1.0, 1.0, size=p)
        k = rng.uniform(-2.0, 2.0, size=p)
        return cls(
            lambda x: c + M @ x + s * np.sin(k @ x),
            lambda x: M + np.outer(s, k) * np.cos(k @ x),
        )


def codiff_correspondence(graph, alpha, x):
    """
    d^{*g}α on the graph against δ_∇α plus the mean-curvature correction.

    lhs = −g^{ij}(∂_j α_i − Γ^k_ij α_k)
    rhs = δ_∇α + i((G⁻¹∘E♯)(δ_∇E_∇)♯)α
    """
    x = graph.check_point(x)
    p = graph.p
    a = np.asarray(alpha.value(x), dtype=float)
    J = np.asarray(alpha.jacobian(x), dtype=float)
    g_inv = np.linalg.inv(induced_metric(graph, x))
    gamma = christoffel(graph, x)
    lhs = -float(np.einsum("ij,ij->", g_inv, J) - np.einsum("ij,kij,k->", g_inv, gamma, a))

    connection = fm_connection(graph)
    w, B, K = _codifferential_of_curvature(connection, x)
    delta = -float(np.einsum("ij,ji->", K[:p, :p], J))
    correction_vector = K @ B.T @ w
    correction = float(a @ correction_vector[:p])
    rhs = delta + correction
    return {"lhs": lhs, "rhs": rhs, "delta": delta, "correction": correction, "residual": abs(lhs - rhs)}


def correspondence_report(graph, points=100, seed=0, tol=CORRESPONDENCE_TOL):
    """Both correspondence identities and the minimality equivalence at sampled points."""
    rng = np.random.Generator(np.random.Philox(seed))
    samples = graph.sample_points(points, seed=seed)
    max_delta = max_codiff = raw_delta = raw_codiff = minimality_max = 0.0
    equivalent = True
    for x in samples:
        delta = fm_delta_check(graph, x)
        minimality = graph_minimality_residual(graph, x)
        scale = 1.0 + float(np.abs(minimality).max())
        max_delta = max(max_delta, delta["residual"] / scale)
        raw_delta = max(raw_delta, delta["residual"])
        minimality_max = max(minimality_max, float(np.abs(minimality).max()))

        # |g^{ij}f_ij| and |δE| must vanish together
        m_norm = float(np.linalg.norm(minimality))
        d_norm = float(np.linalg.norm(delta["generic"]))
        if m_norm > tol or d_norm > tol:
            equivalent &= d_norm <= EQUIVALENCE_BAND * m_norm and m_norm <= EQUIVALENCE_BAND * d_norm
        check = codiff_correspondence(graph, OneFormJet.random(graph.p, rng), x)
        max_codiff = max(max_codiff, check["residual"] / (1.0 + abs(check["lhs"])))
        raw_codiff = max(raw_codiff, check["residual"])

    passed = bool(max_delta <= tol and max_codiff <= tol and equivalent)
    if passed:
        logger.info("✓ correspondence holds on %s at %d points", graph.name, points)
    else:
        logger.warning("✗ correspondence fails on %s: δE %.3e, d*α %.3e", graph.name, max_delta, max_codiff)
    return {
        "graph": graph.name,
        "points": int(points),
        "max_delta_residual": max_delta,
        "max_codiff_residual": max_codiff,
        "max_raw_delta_residual": raw_delta,
        "max_raw_codiff_residual": raw_codiff,
        "minimality_max": minimality_max,
        "pass": passed,
    }
