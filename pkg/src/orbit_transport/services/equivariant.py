"""Lifting measures, couplings and potentials from a quotient back to the base.

Each quotient point x* lifts to ν_x, the Haar measure of the group pushed
onto the orbit of x, which is the uniform distribution on that orbit. Λ
extends this linearly to measures, and couplings lift pair by pair
through a section into the orbit-distance set 𝒪𝒟.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from orbit_transport.config import settings
from orbit_transport.errors import (
    CouplingNotOptimal,
    InfeasibleInput,
    SectionOutsideOD,
    ValidationError,
)
from orbit_transport.services.core_spaces import (
    FiniteMetricMeasureSpace,
    GroupAction,
    QuotientSpace,
    _frozen,
    pushforward,
)
from orbit_transport.services.reports import Check
from orbit_transport.services.transport import (
    Coupling,
    Measure,
    PotentialPair,
    check_potentials,
    cost_matrix,
    cp_transform,
    wasserstein,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OrbitMeasureFamily:
    """ν_x for every base point, stored as rows of a table."""

    action: GroupAction
    nu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n, order = self.action.base.size, self.action.order
        nu = np.zeros((n, n))
        for x in range(n):
            nu[x] = np.bincount(self.action.table[:, x], minlength=n) / order
        object.__setattr__(self, "nu", _frozen(nu))

    def of(self, x: int) -> np.ndarray:
        return self.nu[x]


def orbit_measures(action: GroupAction) -> OrbitMeasureFamily:
    return OrbitMeasureFamily(action)


def _orbit_sizes(q: QuotientSpace) -> np.ndarray:
    return np.array([len(orb) for orb in q.orbits], dtype=float)


def lift_weights(q: QuotientSpace, weights) -> np.ndarray:
    """Λ on raw weights: μ̂(x) = μ(x*) / |G(x)|."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(q.orbits),):
        raise ValidationError(f"expected {len(q.orbits)} orbit weights, got {weights.size}")
    return weights[q.proj] / _orbit_sizes(q)[q.proj]


def lift_measure(q: QuotientSpace, mu: Measure) -> Measure:
    if mu.space is not q.qspace and mu.space.size != q.qspace.size:
        raise ValidationError("measure does not live on the quotient")
    return Measure(q.space, lift_weights(q, mu.weights))


def g_average_measure(action: GroupAction, mu: Measure) -> Measure:
    """μ_G = (1/|G|) Σ_g g_♯μ."""
    n = action.base.size
    acc = np.zeros(n)
    for row in action.table:
        acc += np.bincount(row, weights=mu.weights, minlength=n)
    return Measure(mu.space, acc / action.order)


def orbit_distance_set(q: QuotientSpace) -> set[tuple[int, int]]:
    """𝒪𝒟: pairs realising the distance between their orbits."""
    lifted = q.qspace.dist[np.ix_(q.proj, q.proj)]
    return {(int(x), int(y)) for x, y in np.argwhere(q.space.dist == lifted)}


def _od_mask(q: QuotientSpace) -> np.ndarray:
    return q.space.dist == q.qspace.dist[np.ix_(q.proj, q.proj)]


def lexicographic_section(q: QuotientSpace):
    """Section choosing the lexicographically first 𝒪𝒟 pair over each orbit pair."""
    mask = _od_mask(q)

    def section(i: int, j: int) -> tuple[int, int]:
        for x in q.orbits[i]:
            for y in q.orbits[j]:
                if mask[x, y]:
                    return x, y
        raise SectionOutsideOD(f"orbits {i} and {j} have no pair realising their distance")

    return section


def lift_coupling(q: QuotientSpace, pi: Coupling, section=None) -> Coupling:
    """π̂ = Σ π(x*, y*) π_{x̄,ȳ}, with π_{x,y} = (1/|G|) Σ_g δ_{(gx, gy)}."""
    if section is None:
        section = lexicographic_section(q)
    mask = _od_mask(q)
    action = q.base
    n = q.space.size
    plan = np.zeros((n, n))
    for i, j in np.argwhere(pi.plan > 0):
        x, y = section(int(i), int(j))
        if q.proj[x] != i or q.proj[y] != j or not mask[x, y]:
            raise SectionOutsideOD(f"section picked ({x}, {y}) for orbit pair ({i}, {j}), not in 𝒪𝒟")
        np.add.at(plan, (action.table[:, x], action.table[:, y]), pi.plan[i, j] / action.order)
    return Coupling(plan=plan, mu0=lift_measure(q, pi.mu0), mu1=lift_measure(q, pi.mu1), p=pi.p)


def lift_potentials(q: QuotientSpace, pair: PotentialPair, p: float = None) -> PotentialPair:
    if p is None:
        p = settings.default_p
    violation = check_potentials(q.qspace, pair, p)
    if violation > settings.solver_tol:
        raise InfeasibleInput(f"quotient potentials violate admissibility by {violation:.3e}")
    lifted = PotentialPair(phi=np.asarray(pair.phi)[q.proj], psi=np.asarray(pair.psi)[q.proj])
    violation = check_potentials(q.space, lifted, p)
    if violation > settings.solver_tol:
        raise InfeasibleInput(f"lifted potentials violate admissibility by {violation:.3e}")
    return lifted


# ── Functionals ───────────────────────────────────────────────


def entropy(mu: Measure, ref: FiniteMetricMeasureSpace = None) -> float:
    """Ent(μ) = Σ ρ log ρ 𝔪 with 0 log 0 = 0."""
    ref = mu.space if ref is None else ref
    rho = mu.weights / ref.mass
    return float(np.sum(xlogy(rho, rho) * ref.mass))


def renyi_functional(mu: Measure, ref: FiniteMetricMeasureSpace = None, Nprime: float = math.inf) -> float:
    """Σ ρ^{1-1/N'} 𝔪 over the support of μ."""
    if Nprime < 1:
        raise ValidationError(f"N' = {Nprime} must be at least 1")
    ref = mu.space if ref is None else ref
    rho = mu.weights / ref.mass
    support = rho > 0
    exponent = 1.0 - 1.0 / Nprime
    return float(np.sum(np.power(rho[support], exponent) * ref.mass[support]))


# ── Distortion coefficients ──────────────────────────────────


@dataclass(frozen=True)
class DistortionParams:
    K: float
    N: float
    t: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError(f"t = {self.t} outside [0, 1]")
        if self.theta < 0:
            raise ValidationError(f"theta = {self.theta} is negative")
        if self.N < 1:
            raise ValidationError(f"N = {self.N} must be at least 1")


def _sinh_ratio(t: float, a: float) -> float:
    if a <= 20.0:
        return math.sinh(t * a) / math.sinh(a)
    # sinh(ta)/sinh(a) = e^{(t-1)a} (1 - e^{-2ta}) / (1 - e^{-2a})
    return math.exp((t - 1.0) * a) * (-math.expm1(-2.0 * t * a)) / (-math.expm1(-2.0 * a))


def _sigma(K: float, N: float, t: float, theta: float) -> float:
    if math.isinf(N):
        return t
    k_theta2 = K * theta * theta
    if k_theta2 == 0.0:
        return t
    if k_theta2 >= N * math.pi ** 2:
        return math.inf
    if k_theta2 > 0:
        a = theta * math.sqrt(K / N)
        return math.sin(t * a) / math.sin(a)
    if N == 0:
        return t
    return _sinh_ratio(t, theta * math.sqrt(-K / N))


def _tau(K: float, N: float, t: float, theta: float) -> float:
    if math.isinf(N):
        return t
    if N == 1:
        return math.inf if K > 0 and theta > 0 else t
    s = _sigma(K, N - 1.0, t, theta)
    if math.isinf(s):
        return math.inf
    return t ** (1.0 / N) * s ** ((N - 1.0) / N)


def sigma_coefficient(par: DistortionParams) -> float:
    return _sigma(par.K, par.N, par.t, par.theta)


def tau_coefficient(par: DistortionParams) -> float:
    return _tau(par.K, par.N, par.t, par.theta)


def tau_table(K: float, N: float, t: float, thetas) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    return np.vectorize(lambda th: _tau(K, N, t, th), otypes=[float])(thetas)


# ── Verifiers ─────────────────────────────────────────────────


def _cd_rhs(plan: np.ndarray, dist: np.ndarray, rho0, rho1, K: float, Nprime: float, t: float) -> float:
    xs, ys = np.nonzero(plan > 0)
    theta = dist[xs, ys]
    weight0 = tau_table(K, Nprime, 1.0 - t, theta)
    weight1 = tau_table(K, Nprime, t, theta)
    terms = plan[xs, ys] * (
        weight0 * np.power(rho0[xs], -1.0 / Nprime) + weight1 * np.power(rho1[ys], -1.0 / Nprime)
    )
    return float(terms.sum())


def verify_cd_rhs_equality(
    q: QuotientSpace,
    rho0,
    rho1,
    pi: Coupling,
    K: float,
    Nprime: float,
    t: float,
    tol: float = None,
) -> Check:
    """Compare the distortion-weighted integral against π on the quotient with the one against π̂ on the base."""
    if tol is None:
        tol = settings.solver_tol
    DistortionParams(K=K, N=Nprime, t=t, theta=0.0)
    rho0 = np.asarray(rho0, dtype=float)
    rho1 = np.asarray(rho1, dtype=float)
    rows, cols = np.nonzero(pi.plan > 0)
    if np.any(rho0[rows] <= 0) or np.any(rho1[cols] <= 0):
        raise ValidationError("densities must be positive on the support of the coupling")

    best = wasserstein(pi.mu0, pi.mu1, pi.p).value ** pi.p
    cost = pi.cost()
    if cost - best > settings.solver_tol * max(1.0, best):
        raise CouplingNotOptimal(f"coupling cost {cost:.12g} exceeds the optimum {best:.12g}")

    quotient_side = _cd_rhs(pi.plan, q.qspace.dist, rho0, rho1, K, Nprime, t)
    lifted = lift_coupling(q, pi)
    base_side = _cd_rhs(lifted.plan, q.space.dist, rho0[q.proj], rho1[q.proj], K, Nprime, t)
    logger.debug(f"CD integrand: quotient {quotient_side:.15g}, base {base_side:.15g}")
    return Check.equality("cd_rhs_lift", quotient_side, base_side, tol, relative=True)


def verify_lift_isometry(q: QuotientSpace, mu0: Measure, mu1: Measure, p: float = None, tol: float = None) -> list[Check]:
    if p is None:
        p = settings.default_p
    if tol is None:
        tol = settings.solver_tol * 10
    lower = wasserstein(mu0, mu1, p)
    hat0, hat1 = lift_measure(q, mu0), lift_measure(q, mu1)
    upper = wasserstein(hat0, hat1, p)
    lifted = lift_coupling(q, lower.coupling)
    potentials = lift_potentials(q, lower.potentials, p)
    outside = int(np.sum((lifted.plan > 0) & ~_od_mask(q)))
    return [
        Check.equality(f"W{p:g} lift isometry", lower.value, upper.value, tol, relative=True),
        Check.equality("lifted coupling cost", lifted.cost(p), upper.value ** p, tol, relative=True),
        Check.equality("lifted coupling on orbit-distance set", outside, 0, 0.0),
        Check.equality("lifted coupling marginals", lifted.marginal_residual(), 0.0, settings.marginal_tol),
        Check.equality("lifted potentials objective", potentials.objective(hat0, hat1), upper.value ** p, tol, relative=True),
        Check.lower_bound("lifted potentials admissible", -check_potentials(q.space, potentials, p), 0.0, settings.solver_tol),
    ]


def verify_transform_commutation(q: QuotientSpace, psi, p: float = None) -> Check:
    if p is None:
        p = settings.default_p
    psi = np.asarray(psi, dtype=float)
    lifted_then = cp_transform(q.space, psi[q.proj], p)
    then_lifted = cp_transform(q.qspace, psi, p)[q.proj]
    deviation = float(np.max(np.abs(lifted_then - then_lifted)))
    return Check(
        name="c_p-transform commutes with lift",
        lhs=float(np.max(np.abs(lifted_then))),
        rhs=float(np.max(np.abs(then_lifted))),
        diff=deviation,
        tolerance=settings.metric_tol,
        passed=deviation <= settings.metric_tol,
    )


def verify_functional_lifts(q: QuotientSpace, mu: Measure, Nprime: float = math.inf) -> list[Check]:
    hat = lift_measure(q, mu)
    tol = settings.metric_tol * 10
    projected = pushforward(q, hat.weights)
    return [
        Check.equality("pushforward of lift", float(np.max(np.abs(projected - mu.weights))), 0.0, tol),
        Check.equality("entropy lift", entropy(mu, q.qspace), entropy(hat, q.space), tol, relative=True),
        Check.equality(
            f"Renyi lift N'={Nprime:g}",
            renyi_functional(mu, q.qspace, Nprime),
            renyi_functional(hat, q.space, Nprime),
            tol,
            relative=True,
        ),
    ]


def cost_lift_identity(q: QuotientSpace, pi: Coupling) -> Check:
    """cost(π̂, d^p) against cost(π, d*^p): the two sums hold the same terms."""
    lifted = lift_coupling(q, pi)
    return Check.equality(
        "lifted cost rearrangement",
        float(np.sum(pi.plan * cost_matrix(q.qspace, pi.p))),
        lifted.cost(pi.p),
        settings.metric_tol * 10,
        relative=True,
    )
