"""Built-in and randomly generated symmetric instances.

Random spaces are shortest-path metrics of integer-weighted graphs whose
edge sets are unions of edge orbits, so every generator is an exact
isometry and every distance is an integer.
"""

import itertools
import logging

import numpy as np
from scipy.sparse.csgraph import shortest_path

from orbit_transport.config import settings
from orbit_transport.errors import ClosureExceedsCap
from orbit_transport.services.core_spaces import (
    FiniteMetricMeasureSpace,
    GroupAction,
    Permutation,
    build_group,
    close_permutations,
    orbits_of,
)
from orbit_transport.services.discrete_flow import ReversibleChain
from orbit_transport.services.graph_calculus import WeightedGraph
from orbit_transport.services.ollivier import MarkovChain
from orbit_transport.services.transport import Measure

logger = logging.getLogger(__name__)


# ── Named instances ───────────────────────────────────────────


def rotation(n: int, k: int = 1) -> Permutation:
    return tuple((i + k) % n for i in range(n))


def reflection(n: int) -> Permutation:
    return tuple((-i) % n for i in range(n))


def cycle_distance(n: int) -> np.ndarray:
    i = np.arange(n)
    gap = np.abs(i[:, None] - i[None, :])
    return np.minimum(gap, n - gap).astype(float)


def cycle_space(n: int, mass=None) -> FiniteMetricMeasureSpace:
    mass = np.ones(n) if mass is None else np.asarray(mass, dtype=float)
    return FiniteMetricMeasureSpace(tuple(str(i) for i in range(n)), cycle_distance(n), mass)


def cycle_graph(n: int, measure=None) -> WeightedGraph:
    edges = [(i, (i + 1) % n, 1.0) for i in range(n)] if n > 2 else [(0, 1, 1.0)]
    return WeightedGraph.from_edges(range(n), edges, np.ones(n) if measure is None else measure)


def complete_graph(n: int) -> WeightedGraph:
    edges = [(i, j, 1.0) for i, j in itertools.combinations(range(n), 2)]
    return WeightedGraph.from_edges(range(n), edges, np.ones(n))


def hypercube_vertices(d: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=d))


def hypercube_graph(d: int) -> WeightedGraph:
    verts = hypercube_vertices(d)
    index = {v: i for i, v in enumerate(verts)}
    edges = []
    for v in verts:
        for c in range(d):
            if v[c] == 0:
                w = v[:c] + (1,) + v[c + 1:]
                edges.append((index[v], index[w], 1.0))
    return WeightedGraph.from_edges(("".join(map(str, v)) for v in verts), edges, np.ones(len(verts)))


def coordinate_swap(d: int, a: int, b: int) -> Permutation:
    """Vertex permutation of the d-cube induced by exchanging coordinates a and b."""
    verts = hypercube_vertices(d)
    index = {v: i for i, v in enumerate(verts)}
    perm = []
    for v in verts:
        w = list(v)
        w[a], w[b] = w[b], w[a]
        perm.append(index[tuple(w)])
    return tuple(perm)


def coordinate_swaps(d: int) -> list[Permutation]:
    return [coordinate_swap(d, c, c + 1) for c in range(d - 1)]


def hypercube_space(d: int) -> FiniteMetricMeasureSpace:
    verts = np.array(hypercube_vertices(d))
    dist = np.abs(verts[:, None, :] - verts[None, :, :]).sum(axis=2).astype(float)
    return FiniteMetricMeasureSpace(tuple("".join(map(str, v)) for v in verts), dist, np.ones(len(verts)))


def two_state_chain() -> ReversibleChain:
    return ReversibleChain(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.5, 0.5]), ("a", "b"))


def lazy_cycle_chain(n: int, laziness: float = 0.5) -> ReversibleChain:
    kernel = laziness * np.eye(n)
    for i in range(n):
        kernel[i, (i + 1) % n] += (1.0 - laziness) / 2
        kernel[i, (i - 1) % n] += (1.0 - laziness) / 2
    return ReversibleChain(kernel, np.full(n, 1.0 / n))


def graph_walk_chain(G: WeightedGraph) -> ReversibleChain:
    """Symmetric walk K(x,y) = ω(x,y)/c with holding; uniform stationary distribution."""
    c = 2.0 * max(float(G.degree.max()), 1.0)
    kernel = G.omega / c
    np.fill_diagonal(kernel, 1.0 - G.degree / c)
    return ReversibleChain(kernel, np.full(G.size, 1.0 / G.size), G.labels)


# ── Random instances ──────────────────────────────────────────


def _random_generators(rng: np.random.Generator, n: int) -> list[Permutation]:
    kind = rng.integers(0, 4)
    if kind == 0:
        return [rotation(n, int(rng.integers(1, n)) if n > 1 else 0)]
    if kind == 1:
        return [rotation(n, 1), reflection(n)]
    if kind == 2:
        return [tuple(int(v) for v in rng.permutation(n))]
    # blocks of equal size swapped by one involution, plus the identity on the rest
    half = int(rng.integers(1, n // 2 + 1)) if n >= 2 else 0
    perm = list(range(n))
    for i in range(half):
        perm[i], perm[half + i] = half + i, i
    return [tuple(perm)]


def random_group_generators(rng: np.random.Generator, n: int, max_order: int = None) -> list[Permutation]:
    max_order = settings.max_group_order if max_order is None else max_order
    for _ in range(100):
        gens = _random_generators(rng, n)
        try:
            close_permutations(gens, n, cap=max_order)
            return gens
        except ClosureExceedsCap:
            continue
    return [tuple(range(n))]


def _edge_orbits(generators: list[Permutation], n: int) -> list[list[tuple[int, int]]]:
    elements = close_permutations(generators, n)
    seen, orbits = set(), []
    for x, y in itertools.combinations(range(n), 2):
        if (x, y) in seen:
            continue
        orbit = sorted({tuple(sorted((g[x], g[y]))) for g in elements})
        seen.update(orbit)
        orbits.append(orbit)
    return orbits


def random_invariant_weights(rng: np.random.Generator, n: int, generators, density: float = 0.4, max_weight: int = 3) -> np.ndarray:
    """Symmetric integer weights constant on edge orbits; connected whenever n > 1."""
    orbits = _edge_orbits(list(generators), n)
    weights = np.zeros((n, n))
    for orbit in orbits:
        if rng.random() < density:
            w = float(rng.integers(1, max_weight + 1))
            for x, y in orbit:
                weights[x, y] = weights[y, x] = w
    # path edges (i, i+1) and their images keep the graph connected
    for orbit in orbits:
        if any(y == x + 1 for x, y in orbit) and not any(weights[x, y] for x, y in orbit):
            w = float(rng.integers(1, max_weight + 1))
            for x, y in orbit:
                weights[x, y] = weights[y, x] = w
    return weights


def random_invariant_space(rng: np.random.Generator, max_points: int = None, max_order: int = None) -> GroupAction:
    max_points = settings.max_points if max_points is None else max_points
    n = int(rng.integers(2, max_points + 1))
    gens = random_group_generators(rng, n, max_order)
    weights = random_invariant_weights(rng, n, gens)
    dist = shortest_path(weights, method="D", directed=False)
    point_orbits = orbits_of(gens, n)
    mass = np.zeros(n)
    for orbit in point_orbits:
        mass[list(orbit)] = float(rng.integers(1, 5))
    space = FiniteMetricMeasureSpace(tuple(str(i) for i in range(n)), dist, mass)
    return build_group(space, gens)


def random_invariant_graph(rng: np.random.Generator, max_vertices: int = 10, max_order: int = 8) -> tuple[WeightedGraph, list[Permutation]]:
    n = int(rng.integers(2, max_vertices + 1))
    gens = random_group_generators(rng, n, max_order)
    weights = random_invariant_weights(rng, n, gens)
    return WeightedGraph(tuple(str(i) for i in range(n)), weights, weights.sum(axis=1)), gens


def random_measure(rng: np.random.Generator, space: FiniteMetricMeasureSpace, zeros: bool = True) -> Measure:
    low = 0 if zeros else 1
    w = rng.integers(low, 9, size=space.size).astype(float)
    if w.sum() == 0:
        w[int(rng.integers(space.size))] = 1.0
    return Measure.normalized(space, w)


def random_chain(rng: np.random.Generator, space: FiniteMetricMeasureSpace) -> MarkovChain:
    raw = rng.integers(0, 5, size=(space.size, space.size)).astype(float)
    raw[np.arange(space.size), np.arange(space.size)] += 1.0
    return MarkovChain(space, raw / raw.sum(axis=1, keepdims=True))


def random_invariant_chain(rng: np.random.Generator, action: GroupAction) -> MarkovChain:
    """Group-average of a random kernel: K(x, y) = mean_g K₀(gx, gy)."""
    base = random_chain(rng, action.base).kernel
    kernel = np.mean([base[np.ix_(row, row)] for row in action.table], axis=0)
    return MarkovChain(action.base, kernel)
