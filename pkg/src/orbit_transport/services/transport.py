"""Exact p-Wasserstein distances on finite spaces, Kantorovich duality and c_p-calculus.

The transportation LP is solved with POT's network simplex (`ot.emd`),
which is exact up to floating point and deterministic for a fixed input
ordering. Dual potentials are normalised by a double c_p-transform so the
first potential is c_p-concave and the pair is admissible everywhere,
including on points of zero mass.
"""

import logging
import math
from dataclasses import dataclass
from itertools import combinations, permutations
from typing import NamedTuple

import numpy as np
import ot

from orbit_transport.config import settings
from orbit_transport.errors import (
    BudgetExceeded,
    DimensionMismatch,
    NotCpConcave,
    SolverFailure,
    ValidationError,
)
from orbit_transport.services.core_spaces import CheckResult, FiniteMetricMeasureSpace

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Measure:
    """A probability measure on a finite space, given by per-point weights."""

    space: FiniteMetricMeasureSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.space.size,):
            raise DimensionMismatch(f"measure has {w.size} weights for {self.space.size} points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            x = int(np.argmin(w))
            raise ValidationError(f"weight at point {x} is {w[x]}, must be nonnegative")
        if abs(w.sum() - 1.0) > settings.probability_tol:
            raise ValidationError(f"weights sum to {w.sum():.17g}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @property
    def density(self) -> np.ndarray:
        """Density with respect to the reference mass of the space."""
        return self.weights / self.space.mass

    @classmethod
    def dirac(cls, space: FiniteMetricMeasureSpace, x: int) -> "Measure":
        w = np.zeros(space.size)
        w[x] = 1.0
        return cls(space, w)

    @classmethod
    def normalized(cls, space: FiniteMetricMeasureSpace, weights) -> "Measure":
        w = np.asarray(weights, dtype=float)
        return cls(space, w / w.sum())


@dataclass(frozen=True, eq=False)
class Coupling:
    plan: np.ndarray
    mu0: Measure
    mu1: Measure
    p: float

    def __post_init__(self):
        plan = np.array(self.plan, dtype=float)
        plan.setflags(write=False)
        object.__setattr__(self, "plan", plan)
        if plan.shape != (self.mu0.space.size, self.mu1.space.size):
            raise DimensionMismatch(f"plan shape {plan.shape} does not match the marginals")
        if np.any(plan < 0):
            raise ValidationError("coupling has negative entries")
        residual = self.marginal_residual()
        if residual > settings.marginal_tol:
            raise ValidationError(f"coupling marginals off by {residual:.3e}")

    def marginal_residual(self) -> float:
        return float(max(
            np.max(np.abs(self.plan.sum(axis=1) - self.mu0.weights)),
            np.max(np.abs(self.plan.sum(axis=0) - self.mu1.weights)),
        ))

    @property
    def support(self) -> list[tuple[int, int]]:
        return [(int(x), int(y)) for x, y in np.argwhere(self.plan > 0)]

    def cost(self, p: float = None) -> float:
        p = self.p if p is None else p
        return float(np.sum(self.plan * cost_matrix(self.mu0.space, p)))


@dataclass(frozen=True, eq=False)
class PotentialPair:
    phi: np.ndarray
    psi: np.ndarray

    def objective(self, mu0: Measure, mu1: Measure) -> float:
        return float(self.phi @ mu0.weights + self.psi @ mu1.weights)


class TransportResult(NamedTuple):
    value: float
    coupling: Coupling
    potentials: PotentialPair


def cost_matrix(space: FiniteMetricMeasureSpace, p: float) -> np.ndarray:
    return np.power(space.dist, p)


def _transform(cost: np.ndarray, psi: np.ndarray) -> np.ndarray:
    # d^p - (-inf) = +inf drops out of the min on its own
    return np.min(cost - psi[None, :], axis=1)


def cp_transform(space: FiniteMetricMeasureSpace, psi, p: float = None) -> np.ndarray:
    """ψ^{c_p}(x) = min_y (d^p(x, y) - ψ(y)), over extended reals."""
    if p is None:
        p = settings.default_p
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (space.size,):
        raise DimensionMismatch(f"function has {psi.size} values for {space.size} points")
    if np.all(psi == -np.inf):
        raise ValidationError("c_p-transform of a function identically -inf")
    return _transform(cost_matrix(space, p), psi)


def check_potentials(space: FiniteMetricMeasureSpace, pair: PotentialPair, p: float) -> float:
    """Largest violation of φ(x) + ψ(y) ≤ d^p(x, y); nonpositive means admissible."""
    slack = pair.phi[:, None] + pair.psi[None, :] - cost_matrix(space, p)
    return float(slack.max())


def wasserstein(mu0: Measure, mu1: Measure, p: float = None) -> TransportResult:
    """Exact W_p with an optimal coupling and an optimal dual pair."""
    if p is None:
        p = settings.default_p
    if mu0.space is not mu1.space:
        if mu0.space.size != mu1.space.size or not np.array_equal(mu0.space.dist, mu1.space.dist):
            raise DimensionMismatch("measures live on different spaces")
    if p < 1:
        raise ValidationError(f"cost exponent p = {p} must be at least 1")

    cost = cost_matrix(mu0.space, p)
    a = np.ascontiguousarray(mu0.weights, dtype=np.float64)
    b = np.ascontiguousarray(mu1.weights, dtype=np.float64)
    plan, log = ot.emd(a, b, cost, log=True)
    if log.get("result_code", 1) != 1:
        raise SolverFailure(f"network simplex stopped with code {log['result_code']}: {log.get('warning')}")

    psi = np.asarray(log["v"], dtype=float)
    phi = _transform(cost, psi)
    psi = _transform(cost.T, phi)
    pair = PotentialPair(phi=phi, psi=psi)

    primal = float(np.sum(plan * cost))
    dual = pair.objective(mu0, mu1)
    gap = abs(primal - dual)
    if gap > settings.solver_tol * max(1.0, abs(primal)):
        raise SolverFailure(f"duality gap {gap:.3e} exceeds tolerance (primal {primal}, dual {dual})")

    coupling = Coupling(plan=plan, mu0=mu0, mu1=mu1, p=p)
    value = max(primal, 0.0) ** (1.0 / p)
    logger.debug(f"W_{p} on {mu0.space.size} points = {value:.12g} (gap {gap:.2e})")
    return TransportResult(value=value, coupling=coupling, potentials=pair)


def cp_superdifferential(space: FiniteMetricMeasureSpace, phi, p: float = None, tol: float = None) -> list[tuple[int, int]]:
    """Pairs (x, y) with φ(x) + φ^{c_p}(y) = d^p(x, y), for a c_p-concave φ."""
    if p is None:
        p = settings.default_p
    if tol is None:
        tol = settings.solver_tol
    phi = np.asarray(phi, dtype=float)
    cost = cost_matrix(space, p)
    phi_c = _transform(cost.T, phi)
    phi_cc = _transform(cost, phi_c)
    deviation = np.max(np.abs(phi_cc - phi))
    if not deviation <= tol:
        raise NotCpConcave(f"function differs from its double c_p-transform by {deviation:.3e}")
    gap = cost - phi[:, None] - phi_c[None, :]
    return [(int(x), int(y)) for x, y in np.argwhere(np.abs(gap) <= tol)]


def check_cyclical_monotonicity(
    space: FiniteMetricMeasureSpace,
    pairs,
    p: float = None,
    max_cycle: int = 4,
    tol: float = None,
    budget: int = None,
) -> CheckResult:
    """Exhaustive search for a cyclic reassignment of pairs that lowers total d^p cost.

    A violating cycle ((x_1, y_1), ..., (x_k, y_k)) is one for which
    Σ c(x_i, y_{i+1}) < Σ c(x_i, y_i) - tol.
    """
    if p is None:
        p = settings.default_p
    if tol is None:
        tol = settings.solver_tol
    if budget is None:
        budget = settings.cyclical_budget
    if max_cycle < 2:
        raise ValidationError(f"max_cycle = {max_cycle} must be at least 2")

    pairs = sorted(set((int(x), int(y)) for x, y in pairs))
    m = len(pairs)
    top = min(max_cycle, m)
    n_cycles = sum(math.comb(m, k) * math.factorial(k - 1) for k in range(2, top + 1))
    if n_cycles > budget:
        raise BudgetExceeded(f"{n_cycles} cycles to test exceeds the budget of {budget}")

    cost = cost_matrix(space, p)
    xs = np.array([x for x, _ in pairs], dtype=int)
    ys = np.array([y for _, y in pairs], dtype=int)
    for k in range(2, top + 1):
        for combo in combinations(range(m), k):
            for rest in permutations(combo[1:]):
                cycle = (combo[0],) + rest
                idx = np.array(cycle)
                original = cost[xs[idx], ys[idx]].sum()
                shifted = cost[xs[idx], ys[np.roll(idx, -1)]].sum()
                if shifted < original - tol:
                    return CheckResult(
                        False,
                        witness=tuple(pairs[i] for i in cycle),
                        max_deviation=float(original - shifted),
                    )
    return CheckResult(True)
