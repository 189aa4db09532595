"""Weighted graphs, the 𝔪-Laplacian and Γ-calculus, Bakry-Émery curvature and quotient graphs.

Γ and Γ₂ at a vertex are quadratic forms in the values of f on the
2-ball around it. The curvature-dimension constant at x is the largest K
with A - K·B positive semidefinite, where A is the form of
Γ₂(f,f)(x) - (Δf(x))²/N and B the form of Γ(f,f)(x). B is nonzero only on
the neighbours of x, so the vertices at distance exactly 2 are eliminated
by a Schur complement and the rest is a generalized symmetric eigenproblem.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import eigh, pinvh
from scipy.sparse.csgraph import connected_components, shortest_path

from orbit_transport.config import settings
from orbit_transport.errors import (
    ActionNotMeasurePreserving,
    ActionNotWeightPreserving,
    DimensionMismatch,
    NonpositiveFunction,
    ValidationError,
)
from orbit_transport.services.core_spaces import (
    CheckResult,
    FiniteMetricMeasureSpace,
    _as_permutation,
    _frozen,
    block_min_distance,
    close_permutations,
    orbit_labels,
    orbits_of,
)
from orbit_transport.services.reports import Check

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    labels: tuple[str, ...]
    omega: np.ndarray
    measure: np.ndarray
    n_components: int = field(init=False, default=1)

    def __post_init__(self):
        w = np.array(self.omega, dtype=float)
        m = np.array(self.measure, dtype=float)
        n = len(self.labels)
        if w.shape != (n, n):
            raise DimensionMismatch(f"weight table shape {w.shape} for {n} vertices")
        if m.shape != (n,):
            raise DimensionMismatch(f"measure has {m.size} entries for {n} vertices")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            x, y = np.argwhere((w < 0) | ~np.isfinite(w))[0]
            raise ValidationError(f"edge weight ({x}, {y}) is {w[x, y]}")
        if not np.array_equal(w, w.T):
            x, y = np.argwhere(w != w.T)[0]
            raise ValidationError(f"edge weights not symmetric at ({x}, {y})")
        if np.any(np.diag(w) != 0):
            x = int(np.flatnonzero(np.diag(w))[0])
            raise ValidationError(f"self-loop at vertex {x}")
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            x = int(np.argmin(m))
            raise ValidationError(f"measure at vertex {x} is {m[x]}, must be positive")
        object.__setattr__(self, "omega", _frozen(w))
        object.__setattr__(self, "measure", _frozen(m))
        components, _ = connected_components(w > 0, directed=False)
        object.__setattr__(self, "n_components", int(components))
        if components > 1:
            logger.warning(f"Graph has {components} connected components")

    @classmethod
    def from_edges(cls, vertices, edges, measure=None) -> "WeightedGraph":
        """Edges are (i, j, weight) triples; the default measure is the degree (1 on isolated vertices)."""
        labels = tuple(str(v) for v in vertices)
        n = len(labels)
        w = np.zeros((n, n))
        for k, edge in enumerate(edges):
            i, j = int(edge[0]), int(edge[1])
            weight = float(edge[2]) if len(edge) > 2 else 1.0
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"edge {k} = ({i}, {j}) references a missing vertex")
            if i == j:
                raise ValidationError(f"edge {k} is a self-loop at vertex {i}")
            if weight <= 0:
                raise ValidationError(f"edge {k} has weight {weight}, must be positive")
            w[i, j] += weight
            w[j, i] += weight
        if measure is None:
            degree = w.sum(axis=1)
            measure = np.where(degree > 0, degree, 1.0)
        return cls(labels, w, np.asarray(measure, dtype=float))

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def degree(self) -> np.ndarray:
        return self.omega.sum(axis=1)

    @property
    def adjacency(self) -> np.ndarray:
        return self.omega > 0

    def neighbours(self, x: int) -> np.ndarray:
        return np.flatnonzero(self.omega[x] > 0)

    @property
    def laplacian_matrix(self) -> np.ndarray:
        return (self.omega - np.diag(self.degree)) / self.measure[:, None]

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(self.omega[i, j])) for i, j in zip(*np.triu_indices(self.size, 1)) if self.omega[i, j] > 0]


# Functions on vertices are plain float arrays.
GraphFunction = np.ndarray


def _function(G: WeightedGraph, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (G.size,):
        raise DimensionMismatch(f"function has {f.size} values for {G.size} vertices")
    return f


def laplacian(G: WeightedGraph, f) -> GraphFunction:
    """Δf(x) = (1/𝔪(x)) Σ_y ω(x,y)(f(y) - f(x))."""
    f = _function(G, f)
    return (G.omega @ f - G.degree * f) / G.measure


def gamma(G: WeightedGraph, f, g) -> GraphFunction:
    f, g = _function(G, f), _function(G, g)
    df = f[None, :] - f[:, None]
    dg = g[None, :] - g[:, None]
    return (G.omega * df * dg).sum(axis=1) / (2.0 * G.measure)


def gamma2(G: WeightedGraph, f, g) -> GraphFunction:
    lf, lg = laplacian(G, f), laplacian(G, g)
    return 0.5 * (laplacian(G, gamma(G, f, g)) - gamma(G, f, lg) - gamma(G, lf, g))


# ── Curvature-dimension ──────────────────────────────────────


def _gamma_form(G: WeightedGraph, z: int) -> np.ndarray:
    """B_z with Γ(f,f)(z) = fᵀ B_z f."""
    n = G.size
    form = np.zeros((n, n))
    for w in G.neighbours(z):
        e = np.zeros(n)
        e[w], e[z] = 1.0, -1.0
        form += G.omega[z, w] * np.outer(e, e)
    return form / (2.0 * G.measure[z])


def curvature_forms(G: WeightedGraph, x: int, N: float) -> tuple[np.ndarray, np.ndarray]:
    """Full-size matrices A, B of Γ₂(f,f)(x) - (Δf(x))²/N and Γ(f,f)(x)."""
    L = G.laplacian_matrix
    B = _gamma_form(G, x)
    lap_gamma = sum((L[x, z] * _gamma_form(G, z) for z in np.flatnonzero(L[x])), np.zeros_like(B))
    A = 0.5 * lap_gamma - 0.5 * (B @ L + L.T @ B)
    if not math.isinf(N):
        A = A - np.outer(L[x], L[x]) / N
    return 0.5 * (A + A.T), B


def cd_curvature(G: WeightedGraph, x: int, N: float = math.inf) -> float:
    if N < 1:
        raise ValidationError(f"N = {N} must be at least 1")
    sphere1 = G.neighbours(x)
    if sphere1.size == 0:
        return math.inf
    ball1 = set(sphere1.tolist()) | {x}
    sphere2 = sorted({int(z) for y in sphere1 for z in G.neighbours(y)} - ball1)

    A, B = curvature_forms(G, x, N)
    U, Z = list(sphere1), sphere2
    a_uu = A[np.ix_(U, U)]
    b_uu = B[np.ix_(U, U)]
    if Z:
        a_zz = A[np.ix_(Z, Z)]
        a_uz = A[np.ix_(U, Z)]
        lowest = eigh(a_zz, eigvals_only=True)[0]
        if lowest < settings.kernel_floor:
            logger.warning(f"Γ₂ form at vertex {x} is indefinite on the 2-sphere (λ = {lowest:.3e})")
            return -math.inf
        a_zz_pinv = pinvh(a_zz)
        leak = np.max(np.abs(a_uz - a_uz @ a_zz_pinv @ a_zz), initial=0.0)
        if leak > settings.solver_tol * max(1.0, np.max(np.abs(A))):
            logger.warning(f"Γ₂ form at vertex {x} couples into the kernel of the 2-sphere block ({leak:.3e})")
            return -math.inf
        a_uu = a_uu - a_uz @ a_zz_pinv @ a_uz.T
    schur = 0.5 * (a_uu + a_uu.T)
    value = float(eigh(schur, b_uu, eigvals_only=True)[0])
    logger.debug(f"CD curvature at vertex {x}, N={N}: {value:.12g}")
    return value


def cd_curvature_profile(G: WeightedGraph, N: float = math.inf, vertices=None) -> np.ndarray:
    """Pointwise curvature K(x); its minimum is the graph's CD(K, N) constant."""
    vertices = range(G.size) if vertices is None else vertices
    return np.array([cd_curvature(G, int(x), N) for x in vertices])


class CdeResult(NamedTuple):
    holds: bool
    slack: float


def cde_check(G: WeightedGraph, x: int, K: float, N: float, f) -> CdeResult:
    """Evaluate Γ₂(f,f) - Γ(f, Γ(f,f)/f) ≥ KΓ(f,f) + (Δf)²/N at x for one positive f."""
    f = _function(G, f)
    if np.any(f <= 0):
        y = int(np.argmin(f))
        raise NonpositiveFunction(f"test function is {f[y]} at vertex {y}")
    g = gamma(G, f, f)
    lhs = gamma2(G, f, f)[x] - gamma(G, f, g / f)[x]
    dimension = 0.0 if math.isinf(N) else laplacian(G, f)[x] ** 2 / N
    curvature = K * g[x] if g[x] != 0 else 0.0
    slack = float(lhs - curvature - dimension)
    return CdeResult(slack >= -settings.metric_tol, slack)


def cde_sweep(G: WeightedGraph, K: float, N: float, functions) -> tuple[float, tuple[int, int] | None]:
    """Minimal slack over every vertex and every supplied function, with (function index, vertex)."""
    worst, where = math.inf, None
    for k, f in enumerate(functions):
        for x in range(G.size):
            _, slack = cde_check(G, x, K, N, f)
            if slack < worst:
                worst, where = slack, (k, x)
    return worst, where


class SobolevNorms(NamedTuple):
    """p-th powers: ‖f‖_p^p, ‖|∇f|^p‖₁ and their sum."""

    lp: float
    gradient: float
    w1p: float


def gradient_power(G: WeightedGraph, f, p: float) -> GraphFunction:
    """|∇f|^p(x) = (1/(p𝔪(x))) Σ_y ω(x,y)|f(y) - f(x)|^p."""
    f = _function(G, f)
    diff = np.abs(f[None, :] - f[:, None]) ** p
    return (G.omega * diff).sum(axis=1) / (p * G.measure)


def sobolev_norms(G: WeightedGraph, f, p: float = 2.0) -> SobolevNorms:
    if p < 1 or math.isinf(p):
        raise ValidationError(f"p = {p} must lie in [1, inf)")
    f = _function(G, f)
    lp = float(np.sum(np.abs(f) ** p * G.measure))
    grad = float(np.sum(gradient_power(G, f, p) * G.measure))
    return SobolevNorms(lp, grad, lp + grad)


# ── Quotient graphs ───────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class QuotientGraph:
    base: WeightedGraph
    elements: tuple
    orbits: tuple[tuple[int, ...], ...]
    proj: np.ndarray
    graph: WeightedGraph

    def lift(self, fstar) -> GraphFunction:
        return np.asarray(fstar, dtype=float)[self.proj]


def quotient_graph(G: WeightedGraph, generators, cap: int = None) -> QuotientGraph:
    """Orbits as vertices, fiber-summed measure and fiber-by-fiber summed weights; self-loops dropped."""
    n = G.size
    gens = [_as_permutation(g, n) for g in generators]
    for k, g in enumerate(gens):
        idx = np.array(g)
        if not np.array_equal(G.omega[np.ix_(idx, idx)], G.omega):
            x, y = np.argwhere(G.omega[np.ix_(idx, idx)] != G.omega)[0]
            raise ActionNotWeightPreserving(f"generator {k} maps edge ({x}, {y}) to ({g[x]}, {g[y]}) with another weight")
        if not np.array_equal(G.measure[idx], G.measure):
            x = int(np.argwhere(G.measure[idx] != G.measure)[0][0])
            raise ActionNotMeasurePreserving(f"generator {k} moves vertex {x} to {g[x]} with another measure")

    elements = close_permutations(gens, n, cap)
    orbits = orbits_of(gens, n)
    proj = np.empty(n, dtype=int)
    for i, orb in enumerate(orbits):
        proj[list(orb)] = i
    indicator = np.zeros((n, len(orbits)))
    indicator[np.arange(n), proj] = 1.0
    omega = indicator.T @ G.omega @ indicator
    np.fill_diagonal(omega, 0.0)
    omega = 0.5 * (omega + omega.T)
    measure = indicator.T @ G.measure
    labels = orbit_labels(G.labels, orbits)
    graph = WeightedGraph(labels, omega, measure)
    logger.debug(f"Quotient graph: {n} vertices → {len(orbits)} orbits")
    return QuotientGraph(base=G, elements=elements, orbits=orbits, proj=_frozen(proj, int), graph=graph)


def _deviation_check(name: str, lifted: np.ndarray, direct: np.ndarray, tol: float) -> Check:
    scale = max(1.0, float(np.max(np.abs(direct), initial=0.0)))
    deviation = float(np.max(np.abs(lifted - direct), initial=0.0)) / scale
    return Check(
        name=name,
        lhs=float(np.max(np.abs(lifted), initial=0.0)),
        rhs=float(np.max(np.abs(direct), initial=0.0)),
        diff=deviation,
        tolerance=tol,
        passed=deviation <= tol,
    )


def verify_lift_commutation(G: WeightedGraph, generators, fstar, gstar=None, p: float = 2.0, tol: float = None) -> list[Check]:
    """Operators on the quotient graph lifted against the same operators on lifted functions."""
    if tol is None:
        tol = settings.metric_tol
    qg = quotient_graph(G, generators)
    H = qg.graph
    fstar = _function(H, fstar)
    gstar = fstar if gstar is None else _function(H, gstar)
    f, g = qg.lift(fstar), qg.lift(gstar)

    low, high = sobolev_norms(H, fstar, p), sobolev_norms(G, f, p)
    dirichlet_low = float(np.sum(gamma(H, fstar, fstar) * H.measure))
    dirichlet_high = float(np.sum(gamma(G, f, f) * G.measure))
    return [
        _deviation_check("Laplacian lift", qg.lift(laplacian(H, fstar)), laplacian(G, f), tol),
        _deviation_check("Gamma lift", qg.lift(gamma(H, fstar, gstar)), gamma(G, f, g), tol),
        _deviation_check("Gamma2 lift", qg.lift(gamma2(H, fstar, gstar)), gamma2(G, f, g), tol),
        Check.equality(f"l{p:g} isometry", low.lp, high.lp, tol, relative=True),
        Check.equality(f"w1,{p:g} isometry", low.w1p, high.w1p, tol, relative=True),
        Check.equality("Dirichlet energy", dirichlet_low, dirichlet_high, tol, relative=True),
    ]


def verify_cd_quotient(G: WeightedGraph, generators, N: float = math.inf, tol: float = None) -> list[Check]:
    if tol is None:
        tol = settings.cd_quotient_tol
    qg = quotient_graph(G, generators)
    k = float(np.min(cd_curvature_profile(G, N)))
    k_star = float(np.min(cd_curvature_profile(qg.graph, N)))
    logger.debug(f"CD constants N={N}: base {k:.12g}, quotient {k_star:.12g}")
    return [Check.lower_bound(f"CD(K, {N:g}) preserved", k_star, k, tol)]


def hop_distance(G: WeightedGraph) -> np.ndarray:
    return shortest_path(G.adjacency.astype(float), method="D", directed=False, unweighted=True)


def graph_metric_space(G: WeightedGraph) -> FiniteMetricMeasureSpace:
    """Vertices with the combinatorial distance and the vertex measure."""
    dist = hop_distance(G)
    if not np.all(np.isfinite(dist)):
        raise ValidationError("graph is disconnected, hop distance is not a metric")
    return FiniteMetricMeasureSpace(G.labels, dist, G.measure)


def verify_quotient_hop_metric(G: WeightedGraph, generators) -> Check:
    """The quotient graph's hop metric against the orbit-to-orbit distance of the base hop metric."""
    qg = quotient_graph(G, generators)
    induced = block_min_distance(hop_distance(G), qg.orbits)
    direct = hop_distance(qg.graph)
    return _deviation_check("quotient hop metric", direct, induced, 0.0)


def is_graph_metric_foliation(G: WeightedGraph, leaves) -> CheckResult:
    """Every x' in the leaf of x has a neighbour in the leaf of y whenever x ∼ y."""
    leaves = [tuple(sorted(int(v) for v in leaf)) for leaf in leaves]
    owner = np.full(G.size, -1)
    for i, leaf in enumerate(leaves):
        owner[list(leaf)] = i
    if np.any(owner < 0) or sum(len(leaf) for leaf in leaves) != G.size:
        raise ValidationError(f"leaves do not partition the {G.size} vertices")
    adj = G.adjacency
    for x in range(G.size):
        for y in G.neighbours(x):
            target = list(leaves[owner[y]])
            for x2 in leaves[owner[x]]:
                if not adj[x2, target].any():
                    return CheckResult(False, witness=(x, int(y), x2))
    return CheckResult(True)
