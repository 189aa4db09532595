"""Markov chains on finite metric spaces and Ollivier coarse Ricci curvature."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from orbit_transport.config import settings
from orbit_transport.errors import DimensionMismatch, NoODRepresentative, SamePoint, ValidationError
from orbit_transport.services.core_spaces import (
    FiniteMetricMeasureSpace,
    GroupAction,
    QuotientSpace,
    _frozen,
    pushforward,
)
from orbit_transport.services.reports import Check
from orbit_transport.services.transport import Measure, wasserstein

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """A one-step kernel x ↦ μ_x on a finite metric measure space."""

    space: FiniteMetricMeasureSpace
    kernel: np.ndarray

    def __post_init__(self):
        k = np.array(self.kernel, dtype=float)
        n = self.space.size
        if k.shape != (n, n):
            raise DimensionMismatch(f"kernel shape {k.shape}, expected {(n, n)}")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            x, y = np.argwhere((k < 0) | ~np.isfinite(k))[0]
            raise ValidationError(f"kernel entry ({x}, {y}) is {k[x, y]}")
        sums = k.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > settings.probability_tol * max(1, n))
        if bad.size:
            raise ValidationError(f"kernel row {bad[0]} sums to {sums[bad[0]]:.17g}")
        object.__setattr__(self, "kernel", _frozen(k))

    def row(self, x: int) -> Measure:
        return Measure(self.space, self.kernel[x])


def lazy_random_walk(space: FiniteMetricMeasureSpace, laziness: float = 0.5, weights=None) -> MarkovChain:
    """μ_x = laziness·δ_x + (1 - laziness)·ω(x, ·)/d(x).

    Without explicit edge weights, points at distance 1 are neighbours.
    Isolated points stay put.
    """
    if not 0.0 <= laziness <= 1.0:
        raise ValidationError(f"laziness {laziness} outside [0, 1]")
    n = space.size
    if weights is None:
        weights = (space.dist == 1.0).astype(float)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n, n):
        raise DimensionMismatch(f"weights shape {weights.shape}, expected {(n, n)}")
    degree = weights.sum(axis=1)
    kernel = np.eye(n)
    moving = degree > 0
    kernel[moving] = laziness * kernel[moving] + (1.0 - laziness) * weights[moving] / degree[moving, None]
    return MarkovChain(space, kernel)


def coarse_ricci(chain: MarkovChain, x: int, y: int) -> float:
    """κ(x, y) = 1 - W₁(μ_x, μ_y) / d(x, y)."""
    if x == y:
        raise SamePoint(f"coarse Ricci curvature needs distinct points, got {x} twice")
    w1 = wasserstein(chain.row(x), chain.row(y), p=1.0).value
    return 1.0 - w1 / chain.space.dist[x, y]


def pairwise_curvature(chain: MarkovChain) -> np.ndarray:
    """κ over ordered distinct pairs; NaN on the diagonal. W₁ is symmetric, so each pair is solved once."""
    n = chain.space.size
    table = np.full((n, n), np.nan)
    for x in range(n):
        for y in range(x + 1, n):
            table[x, y] = table[y, x] = coarse_ricci(chain, x, y)
    return table


def min_coarse_ricci(chain: MarkovChain) -> float:
    if chain.space.size < 2:
        return math.inf
    return float(np.nanmin(pairwise_curvature(chain)))


def is_invariant_chain(chain: MarkovChain, action: GroupAction, tol: float = 0.0) -> bool:
    """g_♯μ_x = μ_{gx} for every g, i.e. K(gx, gy) = K(x, y)."""
    k = chain.kernel
    return all(np.max(np.abs(k[np.ix_(row, row)] - k)) <= tol for row in action.table)


def g_averaged_chain(chain: MarkovChain, action: GroupAction) -> MarkovChain:
    """K̄(x, y) = (1/|G|) Σ_g K(gx, gy), the invariant chain x ↦ mean_g (g⁻¹)_♯μ_{gx}."""
    k = chain.kernel
    averaged = np.mean([k[np.ix_(row, row)] for row in action.table], axis=0)
    return MarkovChain(chain.space, averaged)


def quotient_chain(chain: MarkovChain, q: QuotientSpace) -> MarkovChain:
    """μ̌_{x*} = (1/|G|) Σ_g p_♯μ_{gx}.

    Summing over g visits each point of the orbit of x exactly |G_x| times,
    so the row is the orbit average of the pushed-forward rows, which does
    not depend on the representative.
    """
    if chain.space.size != q.space.size:
        raise DimensionMismatch("chain does not live on the base of the quotient")
    rows = np.array([
        pushforward(q, chain.kernel[list(orb)].mean(axis=0)) for orb in q.orbits
    ])
    return MarkovChain(q.qspace, rows)


def quotient_chain_residual(chain: MarkovChain, q: QuotientSpace) -> float:
    """Largest gap between the quotient rows and the group-sum formula evaluated at every representative."""
    reduced = quotient_chain(chain, q).kernel
    worst = 0.0
    for x in range(q.space.size):
        direct = np.mean([pushforward(q, chain.kernel[gx]) for gx in q.base.table[:, x]], axis=0)
        worst = max(worst, float(np.max(np.abs(direct - reduced[q.proj[x]]))))
    return worst


def verify_ollivier_preservation(chain: MarkovChain, q: QuotientSpace, tol: float = None) -> list[Check]:
    if tol is None:
        tol = settings.ollivier_tol
    k = min_coarse_ricci(chain)
    k_star = min_coarse_ricci(quotient_chain(chain, q))
    logger.debug(f"Ollivier curvature: base {k:.12g}, quotient {k_star:.12g}")
    return [
        Check.lower_bound("Ollivier bound preserved", k_star, k, tol),
        Check.equality("quotient rows representative-independent", quotient_chain_residual(chain, q), 0.0, settings.metric_tol * 10),
    ]


def varying_bound_kstar(k, q: QuotientSpace) -> np.ndarray:
    """k*(x*, y*) = max over 𝒪𝒟 representatives of the group-averaged bound."""
    k = np.asarray(k, dtype=float)
    n = q.space.size
    if k.shape != (n, n):
        raise DimensionMismatch(f"bound table shape {k.shape}, expected {(n, n)}")
    table = q.base.table
    averaged = np.mean([k[np.ix_(row, row)] for row in table], axis=0)
    od = q.space.dist == q.qspace.dist[np.ix_(q.proj, q.proj)]
    m = len(q.orbits)
    out = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            block = np.ix_(q.orbits[i], q.orbits[j])
            candidates = averaged[block][od[block]]
            if candidates.size == 0:
                raise NoODRepresentative(f"orbits {i} and {j} have no pair realising their distance")
            out[i, j] = candidates.max()
    return out
