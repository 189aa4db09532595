"""Finite metric measure spaces, permutation group actions and their quotients.

Also houses the foliation and submetry verifiers that work on leaf
partitions of a finite space.
"""

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from orbit_transport.config import settings
from orbit_transport.errors import (
    ClosureExceedsCap,
    ConditionalNotSupported,
    GeneratorNotIsometry,
    GeneratorNotMeasurePreserving,
    NotSurjective,
    QuotientNotMetric,
    ValidationError,
)

logger = logging.getLogger(__name__)

Permutation = tuple[int, ...]


def _frozen(array: np.ndarray, dtype=float) -> np.ndarray:
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


def check_metric_table(dist: np.ndarray, tol: float = None) -> str | None:
    """Return a description of the first metric axiom violated, or None."""
    if tol is None:
        tol = settings.metric_tol
    n = dist.shape[0]
    if dist.ndim != 2 or dist.shape[1] != n:
        return f"distance table must be square, got shape {dist.shape}"
    if not np.all(np.isfinite(dist)):
        x, y = np.argwhere(~np.isfinite(dist))[0]
        return f"distance ({x}, {y}) is not finite"
    diag = np.abs(np.diag(dist))
    if np.any(diag > 0):
        x = int(np.argmax(diag))
        return f"dist({x}, {x}) = {dist[x, x]} is not zero"
    asym = np.abs(dist - dist.T)
    if np.any(asym > tol):
        x, y = np.unravel_index(np.argmax(asym), asym.shape)
        return f"dist({x}, {y}) != dist({y}, {x})"
    off = dist + np.eye(n)
    if np.any(off <= 0):
        x, y = np.argwhere(off <= 0)[0]
        return f"dist({x}, {y}) = {dist[x, y]} must be positive for distinct points"
    # detour[x, y, z] = d(x, y) + d(y, z) compared against d(x, z)
    detour = dist[:, :, None] + dist[None, :, :]
    excess = dist[:, None, :] - detour
    if np.any(excess > tol):
        x, y, z = np.unravel_index(np.argmax(excess), excess.shape)
        return f"triangle inequality fails for ({x}, {y}, {z})"
    return None


@dataclass(frozen=True, eq=False)
class FiniteMetricMeasureSpace:
    """Points with a full distance table and strictly positive masses."""

    labels: tuple[str, ...]
    dist: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        dist = _frozen(self.dist)
        mass = _frozen(self.mass)
        labels = tuple(str(label) for label in self.labels)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "labels", labels)

        problem = check_metric_table(dist)
        if problem:
            raise ValidationError(problem)
        if mass.shape != (dist.shape[0],):
            raise ValidationError(f"measure has {mass.size} entries for {dist.shape[0]} points")
        if len(labels) != dist.shape[0]:
            raise ValidationError(f"{len(labels)} labels for {dist.shape[0]} points")
        if np.any(mass <= 0) or not np.all(np.isfinite(mass)):
            x = int(np.argmin(mass))
            raise ValidationError(f"mass({x}) = {mass[x]} must be positive and finite")

    @property
    def size(self) -> int:
        return self.dist.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @classmethod
    def uniform(cls, dist, labels=None) -> "FiniteMetricMeasureSpace":
        dist = np.asarray(dist, dtype=float)
        n = dist.shape[0]
        if labels is None:
            labels = [str(i) for i in range(n)]
        return cls(tuple(labels), dist, np.ones(n))


# ── Permutations ──────────────────────────────────────────────


def identity(n: int) -> Permutation:
    return tuple(range(n))


def compose(a: Permutation, b: Permutation) -> Permutation:
    """a∘b, i.e. apply b first."""
    return tuple(a[i] for i in b)


def inverse(a: Permutation) -> Permutation:
    inv = [0] * len(a)
    for i, ai in enumerate(a):
        inv[ai] = i
    return tuple(inv)


def _as_permutation(gen, n: int) -> Permutation:
    perm = tuple(int(i) for i in gen)
    if len(perm) != n or sorted(perm) != list(range(n)):
        raise ValidationError(f"generator {list(perm)} is not a bijection of 0..{n - 1}")
    return perm


def close_permutations(generators: list[Permutation], n: int, cap: int = None) -> tuple[Permutation, ...]:
    """Breadth-first closure of the generators under composition.

    A finite set closed under composition is a group, so inverses come for
    free. Elements are returned sorted, with the identity first.
    """
    if cap is None:
        cap = settings.group_closure_cap
    ident = identity(n)
    seen = {ident}
    queue = deque([ident])
    while queue:
        g = queue.popleft()
        for s in generators:
            h = compose(s, g)
            if h not in seen:
                seen.add(h)
                if len(seen) > cap:
                    raise ClosureExceedsCap(f"group closure exceeds {cap} elements")
                queue.append(h)
    return tuple(sorted(seen))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x: int, y: int):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            # smaller index becomes the root so orbit ordering is canonical
            if ry < rx:
                rx, ry = ry, rx
            self.parent[ry] = rx


def orbits_of(generators: list[Permutation], n: int) -> tuple[tuple[int, ...], ...]:
    """Orbits as sorted index tuples, ordered by their smallest point."""
    uf = _UnionFind(n)
    for gen in generators:
        for x, gx in enumerate(gen):
            uf.union(x, gx)
    blocks: dict[int, list[int]] = {}
    for x in range(n):
        blocks.setdefault(uf.find(x), []).append(x)
    return tuple(sorted(tuple(b) for b in blocks.values()))


# ── Group actions ─────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class GroupAction:
    """A finite permutation group acting by measure-preserving isometries."""

    base: FiniteMetricMeasureSpace
    generators: tuple[Permutation, ...]
    elements: tuple[Permutation, ...]
    effective: bool = True
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        table = np.array(self.elements, dtype=int).reshape(len(self.elements), self.base.size)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def haar(self) -> float:
        return 1.0 / self.order


def build_group(base: FiniteMetricMeasureSpace, generators, cap: int = None) -> GroupAction:
    """Close the generators into a group and verify the action axioms."""
    n = base.size
    gens = tuple(_as_permutation(g, n) for g in generators)
    for k, g in enumerate(gens):
        idx = np.array(g)
        moved = base.dist[np.ix_(idx, idx)]
        if not np.array_equal(moved, base.dist):
            x, y = np.argwhere(moved != base.dist)[0]
            raise GeneratorNotIsometry(
                f"generator {k} maps pair ({x}, {y}) at distance {base.dist[x, y]} "
                f"to ({g[x]}, {g[y]}) at distance {base.dist[g[x], g[y]]}"
            )
        if not np.array_equal(base.mass[idx], base.mass):
            x = int(np.argwhere(base.mass[idx] != base.mass)[0][0])
            raise GeneratorNotMeasurePreserving(
                f"generator {k} maps point {x} (mass {base.mass[x]}) "
                f"to {g[x]} (mass {base.mass[g[x]]})"
            )

    elements = close_permutations(list(gens), n, cap)
    ident = identity(n)
    effective = all(g == ident or any(g[x] != x for x in range(n)) for g in elements)
    if not effective:
        logger.warning("Group action is not effective: a non-identity element fixes every point")
    logger.debug(f"Built group of order {len(elements)} on {n} points")
    return GroupAction(base=base, generators=gens, elements=elements, effective=effective)


# ── Quotients ─────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class QuotientSpace:
    base: GroupAction
    orbits: tuple[tuple[int, ...], ...]
    proj: np.ndarray
    qspace: FiniteMetricMeasureSpace

    @property
    def space(self) -> FiniteMetricMeasureSpace:
        return self.base.base

    def orbit_of(self, x: int) -> tuple[int, ...]:
        return self.orbits[int(self.proj[x])]


def orbit_labels(labels, orbits) -> tuple[str, ...]:
    """Singleton orbits keep their label; larger ones are written as {a,b,...}."""
    return tuple(labels[orb[0]] if len(orb) == 1 else "{" + ",".join(labels[x] for x in orb) + "}" for orb in orbits)


def block_min_distance(dist: np.ndarray, blocks) -> np.ndarray:
    """Leaf-to-leaf distance table: min over representatives."""
    k = len(blocks)
    out = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = dist[np.ix_(blocks[a], blocks[b])].min()
    return out


def quotient(action: GroupAction) -> QuotientSpace:
    base = action.base
    orbits = orbits_of(list(action.generators), base.size)
    proj = np.empty(base.size, dtype=int)
    for i, orb in enumerate(orbits):
        proj[list(orb)] = i
    proj.setflags(write=False)

    qdist = block_min_distance(base.dist, orbits)
    problem = check_metric_table(qdist)
    if problem:
        raise QuotientNotMetric(f"quotient distance is not a metric: {problem}")
    qmass = np.array([base.mass[list(orb)].sum() for orb in orbits])
    labels = orbit_labels(base.labels, orbits)
    qspace = FiniteMetricMeasureSpace(labels, qdist, qmass)
    logger.debug(f"Quotient of {base.size} points by group of order {action.order}: {len(orbits)} orbits")
    return QuotientSpace(base=action, orbits=orbits, proj=proj, qspace=qspace)


def pushforward(q: QuotientSpace, weights) -> np.ndarray:
    """p_♯ of per-point weights on the base."""
    return np.bincount(q.proj, weights=np.asarray(weights, dtype=float), minlength=len(q.orbits))


def is_invariant_measure(action: GroupAction, weights, tol: float = 0.0) -> bool:
    weights = np.asarray(weights, dtype=float)
    return all(np.max(np.abs(weights[np.array(g)] - weights)) <= tol for g in action.elements)


@dataclass(frozen=True, eq=False)
class Disintegration:
    """Conditional probabilities of the reference measure along orbits (or leaves)."""

    family: np.ndarray

    def reconstruct(self, qmass) -> np.ndarray:
        return np.asarray(qmass, dtype=float) @ self.family


def disintegrate(q: QuotientSpace) -> Disintegration:
    base = q.space
    family = np.zeros((len(q.orbits), base.size))
    for i, orb in enumerate(q.orbits):
        idx = list(orb)
        family[i, idx] = base.mass[idx] / q.qspace.mass[i]
    return Disintegration(_frozen(family))


@dataclass(frozen=True, eq=False)
class LeafPartition:
    space: FiniteMetricMeasureSpace
    leaves: tuple[tuple[int, ...], ...]
    conditionals: Disintegration | None = None

    def __post_init__(self):
        leaves = tuple(tuple(sorted(int(x) for x in leaf)) for leaf in self.leaves)
        object.__setattr__(self, "leaves", leaves)
        points = [x for leaf in leaves for x in leaf]
        if any(len(leaf) == 0 for leaf in leaves):
            raise ValidationError("partition contains an empty leaf")
        if sorted(points) != list(range(self.space.size)):
            raise ValidationError(f"leaves do not partition the {self.space.size} points")
        if self.conditionals is not None and self.conditionals.family.shape != (len(leaves), self.space.size):
            raise ValidationError(
                f"conditionals have shape {self.conditionals.family.shape}, "
                f"expected {(len(leaves), self.space.size)}"
            )


def orbit_partition(q: QuotientSpace) -> LeafPartition:
    return LeafPartition(space=q.space, leaves=q.orbits, conditionals=disintegrate(q))


def quotient_distance(part: LeafPartition) -> np.ndarray:
    return block_min_distance(part.space.dist, part.leaves)


# ── Orbit census ──────────────────────────────────────────────


@dataclass
class IsotropyClass:
    order: int
    points: list[int]
    mass_fraction: float


@dataclass
class OrbitCensus:
    group_order: int
    isotropy_orders: list[int]
    classes: list[IsotropyClass]
    principal: IsotropyClass

    @property
    def principal_fraction(self) -> float:
        return self.principal.mass_fraction


def _conjugacy_key(subgroup: list[Permutation], elements) -> tuple:
    return min(
        tuple(sorted(compose(compose(g, h), inverse(g)) for h in subgroup))
        for g in elements
    )


def orbit_census(action: GroupAction) -> OrbitCensus:
    """Isotropy subgroups per point, grouped by conjugacy class.

    The class with minimal isotropy order is reported as the principal
    candidate; on atomic spaces this is descriptive only.
    """
    base = action.base
    stabilizers = [[g for g in action.elements if g[x] == x] for x in range(base.size)]
    groups: dict[tuple, list[int]] = {}
    for x, stab in enumerate(stabilizers):
        groups.setdefault(_conjugacy_key(stab, action.elements), []).append(x)

    total = base.mass.sum()
    classes = [
        IsotropyClass(
            order=len(key),
            points=pts,
            mass_fraction=float(base.mass[np.array(pts)].sum() / total),
        )
        for key, pts in groups.items()
    ]
    classes.sort(key=lambda c: (c.order, c.points[0]))
    min_order = classes[0].order
    principal = max(
        (c for c in classes if c.order == min_order),
        key=lambda c: (c.mass_fraction, -c.points[0]),
    )
    return OrbitCensus(
        group_order=action.order,
        isotropy_orders=[len(s) for s in stabilizers],
        classes=classes,
        principal=principal,
    )


# ── Foliation and submetry checks ─────────────────────────────


@dataclass
class CheckResult:
    holds: bool
    witness: tuple | None = None
    max_deviation: float = 0.0

    def __bool__(self) -> bool:
        return bool(self.holds)


def _radii(*tables: np.ndarray) -> np.ndarray:
    values = np.unique(np.concatenate([t.ravel() for t in tables]))
    mids = (values[:-1] + values[1:]) / 2
    return np.unique(np.concatenate([values, mids]))


def check_submetry(source: FiniteMetricMeasureSpace, target: FiniteMetricMeasureSpace, f, tol: float = None) -> CheckResult:
    """f(B_r(x)) == B_r(f(x)) on closed balls, at realized distances and their midpoints."""
    if tol is None:
        tol = settings.metric_tol
    f = np.asarray(f, dtype=int)
    if f.shape != (source.size,) or f.min() < 0 or f.max() >= target.size:
        raise ValidationError(f"map must send {source.size} points into 0..{target.size - 1}")
    missing = set(range(target.size)) - set(f.tolist())
    if missing:
        raise NotSurjective(f"points {sorted(missing)} of the target are not hit")

    for r in _radii(source.dist, target.dist):
        inside = source.dist <= r + tol
        target_ball = target.dist <= r + tol
        for x in range(source.size):
            image = np.zeros(target.size, dtype=bool)
            image[f[inside[x]]] = True
            if not np.array_equal(image, target_ball[f[x]]):
                return CheckResult(False, witness=(x, float(r)))
    return CheckResult(True)


def check_metric_foliation(part: LeafPartition, tol: float = None) -> CheckResult:
    """d(F, G) = d(x, G) for every x in F and every pair of leaves."""
    if tol is None:
        tol = settings.metric_tol
    dist = part.space.dist
    worst = 0.0
    for a, leaf_a in enumerate(part.leaves):
        rows = list(leaf_a)
        for b, leaf_b in enumerate(part.leaves):
            to_leaf = dist[np.ix_(rows, list(leaf_b))].min(axis=1)
            spread = to_leaf - to_leaf.min()
            worst = max(worst, float(spread.max()))
            if spread.max() > tol:
                x = rows[int(np.argmax(spread))]
                return CheckResult(False, witness=(a, b, x), max_deviation=worst)
    return CheckResult(True, max_deviation=worst)


def check_mm_foliation(part: LeafPartition, p: float = 2.0, tol: float = None) -> CheckResult:
    """W_p between leaf conditionals equals the quotient distance for every leaf pair."""
    from orbit_transport.services.transport import Measure, wasserstein

    if tol is None:
        tol = settings.solver_tol
    if part.conditionals is None:
        raise ValidationError("metric measure foliation check needs conditionals")
    family = part.conditionals.family
    for i, leaf in enumerate(part.leaves):
        outside = np.ones(part.space.size, dtype=bool)
        outside[list(leaf)] = False
        if np.any(family[i, outside] > 0):
            x = int(np.argwhere(family[i] * outside > 0)[0][0])
            raise ConditionalNotSupported(f"conditional of leaf {i} puts mass on point {x} outside the leaf")

    qdist = quotient_distance(part)
    worst, worst_pair = 0.0, None
    for a in range(len(part.leaves)):
        for b in range(a + 1, len(part.leaves)):
            value, _, _ = wasserstein(Measure(part.space, family[a]), Measure(part.space, family[b]), p)
            dev = float(abs(value - qdist[a, b]))
            if worst_pair is None or dev > worst:
                worst, worst_pair = dev, (a, b)
    return CheckResult(bool(worst <= tol), witness=worst_pair if worst > tol else None, max_deviation=float(worst))
