"""Discrete dynamic transport on reversible Markov chains.

Densities are taken with respect to the stationary distribution π. The
distance 𝒲 minimises the time integral of the action
𝒜′(ρ, V) = ½ Σ α(V(x,y), ρ(x), ρ(y)) K(x,y) π(x) over paths satisfying
the discrete continuity equation, with mobility given by the logarithmic
mean θ.

The solver works on a uniform time grid: momenta are constant on each
interval and antisymmetric (one value per unordered edge), the action on
an interval is the average of its values at the two end densities, and
the continuity equation uses forward differences. The discrete problem is
convex, its optimum bounds the continuous one from above and does not
increase when the grid is refined by halving.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.csgraph import connected_components
from scipy.special import xlogy

from orbit_transport.config import settings
from orbit_transport.errors import (
    DimensionMismatch,
    GroupNotKernelPreserving,
    NegativeInput,
    NotConverged,
    ValidationError,
)
from orbit_transport.services.core_spaces import (
    _as_permutation,
    _frozen,
    close_permutations,
    orbit_labels,
    orbits_of,
)
from orbit_transport.services.reports import Check

logger = logging.getLogger(__name__)

SERIES_SWITCH = 1e-5


def stationary_distribution(kernel) -> np.ndarray:
    """Solve πK = π, Σπ = 1 in the least-squares sense."""
    k = np.asarray(kernel, dtype=float)
    n = k.shape[0]
    system = np.vstack([k.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return pi


@dataclass(frozen=True, eq=False)
class ReversibleChain:
    kernel: np.ndarray
    stationary: np.ndarray = None
    labels: tuple[str, ...] = None

    def __post_init__(self):
        k = np.array(self.kernel, dtype=float)
        n = k.shape[0] if k.ndim == 2 else 0
        if k.shape != (n, n) or n == 0:
            raise DimensionMismatch(f"kernel must be a nonempty square table, got shape {k.shape}")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            x, y = np.argwhere((k < 0) | ~np.isfinite(k))[0]
            raise ValidationError(f"kernel entry ({x}, {y}) is {k[x, y]}")
        sums = k.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > settings.probability_tol * max(1, n))
        if bad.size:
            raise ValidationError(f"kernel row {bad[0]} sums to {sums[bad[0]]:.17g}")
        components, _ = connected_components(k > 0, directed=True, connection="strong")
        if components > 1:
            raise ValidationError(f"kernel is not irreducible ({components} communicating classes)")

        pi = stationary_distribution(k) if self.stationary is None else np.array(self.stationary, dtype=float)
        if pi.shape != (n,):
            raise DimensionMismatch(f"stationary distribution has {pi.size} entries for {n} states")
        if np.any(pi <= 0):
            raise ValidationError(f"stationary weight at state {int(np.argmin(pi))} is not positive")
        if abs(pi.sum() - 1.0) > 1e-10:
            raise ValidationError(f"stationary distribution sums to {pi.sum():.17g}")
        if np.max(np.abs(pi @ k - pi)) > 1e-10:
            raise ValidationError("π is not stationary for the kernel")
        flux = k * pi[:, None]
        if np.max(np.abs(flux - flux.T)) > 1e-10:
            x, y = np.unravel_index(np.argmax(np.abs(flux - flux.T)), flux.shape)
            raise ValidationError(f"detailed balance fails on ({x}, {y})")
        labels = tuple(str(i) for i in range(n)) if self.labels is None else tuple(self.labels)
        object.__setattr__(self, "kernel", _frozen(k))
        object.__setattr__(self, "stationary", _frozen(pi))
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.kernel.shape[0]

    @property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unordered pairs x < y with K(x, y) > 0."""
        return np.nonzero(np.triu(self.kernel > 0, k=1))

    def mass(self, rho) -> float:
        return float(np.asarray(rho, dtype=float) @ self.stationary)


# ── Mobility and action ──────────────────────────────────────


def _nonnegative(*values) -> list[np.ndarray]:
    arrays = [np.asarray(v, dtype=float) for v in values]
    for a in arrays:
        if np.any(a < 0) or np.any(np.isnan(a)):
            raise NegativeInput(f"logarithmic mean needs nonnegative inputs, got minimum {np.nanmin(a)}")
    return arrays


def theta(s, t):
    """Logarithmic mean ∫₀¹ s^p t^{1-p} dp."""
    s, t = _nonnegative(s, t)
    s, t = np.broadcast_arrays(s, t)
    out = np.zeros(s.shape)
    positive = (s > 0) & (t > 0)
    ls = np.log(s[positive])
    lt = np.log(t[positive])
    gap = ls - lt
    near = np.abs(gap) < SERIES_SWITCH
    vals = np.empty(gap.shape)
    sp, tp = s[positive], t[positive]
    vals[near] = np.sqrt(sp[near] * tp[near]) * (1.0 + gap[near] ** 2 / 24.0)
    vals[~near] = (sp[~near] - tp[~near]) / gap[~near]
    out[positive] = vals
    return float(out) if out.ndim == 0 else out


def theta_partial(s, t) -> np.ndarray:
    """∂θ/∂s for positive s, t; ∂θ/∂t is theta_partial(t, s)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    gap = np.log(s) - np.log(t)
    near = np.abs(gap) < SERIES_SWITCH
    safe = np.where(near, 1.0, gap)
    closed = (safe - 1.0 + t / s) / safe ** 2
    series = 0.5 - gap / 6.0 + gap ** 2 / 24.0
    return np.where(near, series, closed)


def alpha(x, s, t):
    """x²/θ(s,t); 0 when θ = 0 and x = 0; +inf when θ = 0 and x ≠ 0."""
    x = np.asarray(x, dtype=float)
    th = np.asarray(theta(s, t), dtype=float)
    x, th = np.broadcast_arrays(x, th)
    out = np.where(x == 0, 0.0, np.inf)
    positive = th > 0
    out = np.where(positive, np.divide(x ** 2, th, out=np.zeros(th.shape), where=positive), out)
    return float(out) if out.ndim == 0 else out


def action(chain: ReversibleChain, rho, V) -> float:
    rho = np.asarray(rho, dtype=float)
    V = np.asarray(V, dtype=float)
    n = chain.size
    if rho.shape != (n,) or V.shape != (n, n):
        raise DimensionMismatch(f"density {rho.shape} / momentum {V.shape} do not match {n} states")
    weight = chain.kernel * chain.stationary[:, None]
    mask = weight > 0
    values = alpha(V[mask], rho[np.nonzero(mask)[0]], rho[np.nonzero(mask)[1]])
    return float(0.5 * np.sum(values * weight[mask]))


def entropy_mm(chain: ReversibleChain, rho) -> float:
    """ℋ(ρ) = Σ ρ log ρ π."""
    rho = np.asarray(rho, dtype=float)
    return float(np.sum(xlogy(rho, rho) * chain.stationary))


# ── Paths ─────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class DensityPath:
    times: np.ndarray
    rho: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        rho = np.array(self.rho, dtype=float)
        V = np.array(self.V, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValidationError("time grid must be strictly increasing with at least two points")
        if times[0] < 0 or times[-1] > 1:
            raise ValidationError(f"time grid [{times[0]}, {times[-1]}] leaves [0, 1]")
        if rho.ndim != 2 or rho.shape[0] != times.size:
            raise DimensionMismatch(f"{rho.shape[0] if rho.ndim == 2 else 0} densities for {times.size} times")
        n = rho.shape[1]
        if V.shape != (times.size - 1, n, n):
            raise DimensionMismatch(f"momentum shape {V.shape}, expected {(times.size - 1, n, n)}")
        if np.any(rho < 0):
            k, x = np.argwhere(rho < 0)[0]
            raise NegativeInput(f"density at time index {k}, state {x} is {rho[k, x]}")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "rho", _frozen(rho))
        object.__setattr__(self, "V", _frozen(V))

    @classmethod
    def constant(cls, rho, steps: int) -> "DensityPath":
        rho = np.asarray(rho, dtype=float)
        n = rho.size
        return cls(np.linspace(0.0, 1.0, steps + 1), np.tile(rho, (steps + 1, 1)), np.zeros((steps, n, n)))

    def check_masses(self, chain: ReversibleChain, tol: float = 1e-9):
        masses = self.rho @ chain.stationary
        k = int(np.argmax(np.abs(masses - 1.0)))
        if abs(masses[k] - 1.0) > tol:
            raise ValidationError(f"density at time index {k} has mass {masses[k]:.12g}")


def continuity_residual(chain: ReversibleChain, path: DensityPath) -> np.ndarray:
    """ρ̇ + ½ Σ_y (V(x,y) - V(y,x)) K(x,y) per interval and state, with forward differences."""
    if path.rho.shape[1] != chain.size:
        raise DimensionMismatch(f"path has {path.rho.shape[1]} states, chain has {chain.size}")
    rate = np.diff(path.rho, axis=0) / np.diff(path.times)[:, None]
    antisym = path.V - np.transpose(path.V, (0, 2, 1))
    divergence = 0.5 * np.einsum("kxy,xy->kx", antisym, chain.kernel)
    return rate + divergence


def path_energy(chain: ReversibleChain, path: DensityPath) -> float:
    """Σ_k ½ [𝒜′(ρ_k, V_k) + 𝒜′(ρ_{k+1}, V_k)] Δt_k."""
    dt = np.diff(path.times)
    total = 0.0
    for k in range(dt.size):
        total += 0.5 * dt[k] * (action(chain, path.rho[k], path.V[k]) + action(chain, path.rho[k + 1], path.V[k]))
    return total


# ── Solver ────────────────────────────────────────────────────


class FlowResult(NamedTuple):
    value: float
    path: DensityPath
    residual: float
    iterations: int
    mollified: bool


def _prepare_density(chain: ReversibleChain, rho, floor: float, name: str) -> tuple[np.ndarray, bool]:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (chain.size,):
        raise DimensionMismatch(f"{name} has {rho.size} values for {chain.size} states")
    if np.any(rho < 0):
        x = int(np.argmin(rho))
        raise NegativeInput(f"{name} is {rho[x]} at state {x}")
    mass = chain.mass(rho)
    if abs(mass - 1.0) > 1e-9:
        raise ValidationError(f"{name} has π-mass {mass:.12g}, expected 1")
    if np.all(rho >= floor):
        return rho / mass, False
    logger.warning(f"{name} has zeros; clamping to {floor:g} (result is approximate)")
    clamped = np.maximum(rho, floor)
    return clamped / chain.mass(clamped), True


class _Problem:
    """Variables: interior densities (steps-1 rows of n) then one momentum per edge and interval."""

    def __init__(self, chain: ReversibleChain, rho0: np.ndarray, rho1: np.ndarray, steps: int):
        self.chain = chain
        self.n = chain.size
        self.steps = steps
        self.dt = 1.0 / steps
        self.ex, self.ey = chain.edges
        self.n_edges = self.ex.size
        self.q = chain.kernel[self.ex, self.ey] * chain.stationary[self.ex]
        self.rho0, self.rho1 = rho0, rho1
        self.n_rho = (steps - 1) * self.n

        # div[x, e]: contribution of the edge momentum to Σ_y V(x,y) K(x,y)
        div = np.zeros((self.n, self.n_edges))
        div[self.ex, np.arange(self.n_edges)] = chain.kernel[self.ex, self.ey]
        div[self.ey, np.arange(self.n_edges)] = -chain.kernel[self.ey, self.ex]
        self.div = div
        self.A, self.b = self._constraints()

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        interior = z[: self.n_rho].reshape(self.steps - 1, self.n)
        rho = np.vstack([self.rho0, interior, self.rho1])
        w = z[self.n_rho:].reshape(self.steps, self.n_edges)
        return rho, w

    def _constraints(self) -> tuple[np.ndarray, np.ndarray]:
        n, steps, m = self.n, self.steps, self.n_edges
        A = np.zeros((steps * n, self.n_rho + steps * m))
        b = np.zeros(steps * n)
        for k in range(steps):
            rows = slice(k * n, (k + 1) * n)
            if k + 1 < steps:
                A[rows, k * n:(k + 1) * n] += np.eye(n) / self.dt
            else:
                b[rows] += self.rho1 / self.dt
            if k > 0:
                A[rows, (k - 1) * n:k * n] -= np.eye(n) / self.dt
            else:
                b[rows] -= self.rho0 / self.dt
            b[rows] = -b[rows]
            A[rows, self.n_rho + k * m:self.n_rho + (k + 1) * m] = self.div
        # the π-weighted sum of all rows is identically zero; drop one
        return A[:-1], b[:-1]

    def objective(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        rho, w = self.split(z)
        th = theta(rho[:, self.ex], rho[:, self.ey])
        inv = 1.0 / th
        w2q = w ** 2 * self.q
        value = 0.5 * self.dt * float(np.sum(w2q * (inv[:-1] + inv[1:])))

        grad_w = self.dt * w * self.q * (inv[:-1] + inv[1:])
        # ∂/∂θ_k of the terms touching time k
        weight = np.zeros_like(th)
        weight[:-1] += w2q
        weight[1:] += w2q
        dtheta = -0.5 * self.dt * weight * inv ** 2
        ds = theta_partial(rho[:, self.ex], rho[:, self.ey])
        dt_ = theta_partial(rho[:, self.ey], rho[:, self.ex])
        grad_rho = np.zeros_like(rho)
        for k in range(rho.shape[0]):
            np.add.at(grad_rho[k], self.ex, dtheta[k] * ds[k])
            np.add.at(grad_rho[k], self.ey, dtheta[k] * dt_[k])
        grad = np.concatenate([grad_rho[1:-1].ravel(), grad_w.ravel()])
        return value, grad

    def initial_guess(self) -> np.ndarray:
        s = np.linspace(0.0, 1.0, self.steps + 1)[1:-1, None]
        interior = (1.0 - s) * self.rho0 + s * self.rho1
        w, *_ = np.linalg.lstsq(self.div, -(self.rho1 - self.rho0), rcond=None)
        return np.concatenate([interior.ravel(), np.tile(w, self.steps)])

    def to_path(self, z: np.ndarray) -> DensityPath:
        rho, w = self.split(z)
        V = np.zeros((self.steps, self.n, self.n))
        V[:, self.ex, self.ey] = w
        V[:, self.ey, self.ex] = -w
        return DensityPath(np.linspace(0.0, 1.0, self.steps + 1), rho, V)


def w_distance(
    chain: ReversibleChain,
    rho0,
    rho1,
    grid: int = None,
    tol: float = None,
    max_iter: int = None,
    mollifier: float = None,
) -> FlowResult:
    """Discretised 𝒲(ρ₀, ρ₁) and the minimising path; raises NotConverged with the best path attached."""
    grid = settings.flow_grid if grid is None else grid
    tol = settings.flow_tol if tol is None else tol
    max_iter = settings.flow_max_iter if max_iter is None else max_iter
    mollifier = settings.flow_mollifier if mollifier is None else mollifier
    if grid < 1:
        raise ValidationError(f"grid = {grid} must be at least 1")

    r0, clamped0 = _prepare_density(chain, rho0, mollifier, "rho0")
    r1, clamped1 = _prepare_density(chain, rho1, mollifier, "rho1")
    mollified = clamped0 or clamped1
    if np.array_equal(r0, r1) or chain.size == 1:
        return FlowResult(0.0, DensityPath.constant(r0, grid), 0.0, 0, mollified)

    problem = _Problem(chain, r0, r1, grid)
    bounds = [(mollifier, None)] * problem.n_rho + [(None, None)] * (grid * problem.n_edges)
    A, b = problem.A, problem.b
    res = minimize(
        problem.objective,
        problem.initial_guess(),
        jac=True,
        method="SLSQP",
        bounds=bounds,
        constraints=[{"type": "eq", "fun": lambda z: A @ z - b, "jac": lambda z: A}],
        options={"maxiter": max_iter, "ftol": settings.flow_ftol},
    )
    path = problem.to_path(res.x)
    residual = float(np.max(np.abs(continuity_residual(chain, path))))
    value = math.sqrt(max(float(res.fun), 0.0))
    result = FlowResult(value, path, residual, int(res.nit), mollified)
    logger.debug(f"𝒲 solve on {chain.size} states, grid {grid}: {value:.10g} ({res.nit} iterations, residual {residual:.2e})")
    if not res.success or residual > tol:
        logger.warning(f"𝒲 solve did not converge: {res.message} (residual {residual:.2e})")
        raise NotConverged(f"flow solver stopped: {res.message}; constraint residual {residual:.2e}", result=result)
    return result


def refinement_series(chain: ReversibleChain, rho0, rho1, grids=(8, 16, 32), **options) -> list[tuple[int, float]]:
    return [(g, w_distance(chain, rho0, rho1, grid=g, **options).value) for g in grids]


def entropy_convexity_diagnostic(chain: ReversibleChain, path: DensityPath, value: float = None) -> float:
    """Largest K with ℋ(ρ_t) ≤ (1-t)ℋ(ρ₀) + tℋ(ρ₁) - (K/2) t(1-t) 𝒲² at every interior grid time.

    Sampled on a discretised path only, so this is not a curvature certificate.
    """
    if value is None:
        value = math.sqrt(max(path_energy(chain, path), 0.0))
    h = np.array([entropy_mm(chain, r) for r in path.rho])
    t = (path.times - path.times[0]) / (path.times[-1] - path.times[0])
    interior = slice(1, -1)
    if value == 0 or t.size < 3:
        return math.inf
    chord = (1.0 - t[interior]) * h[0] + t[interior] * h[-1]
    bound = 2.0 * (chord - h[interior]) / (t[interior] * (1.0 - t[interior]) * value ** 2)
    return float(bound.min())


# ── Symmetry ──────────────────────────────────────────────────


def _group_table(chain: ReversibleChain, generators) -> np.ndarray:
    n = chain.size
    gens = [_as_permutation(g, n) for g in generators]
    tol = settings.metric_tol * 10
    for k, g in enumerate(gens):
        idx = np.array(g)
        moved = chain.kernel[np.ix_(idx, idx)]
        if np.max(np.abs(moved - chain.kernel)) > tol:
            x, y = np.unravel_index(np.argmax(np.abs(moved - chain.kernel)), moved.shape)
            raise GroupNotKernelPreserving(f"generator {k}: K({g[x]}, {g[y]}) differs from K({x}, {y})")
        if np.max(np.abs(chain.stationary[idx] - chain.stationary)) > tol:
            raise GroupNotKernelPreserving(f"generator {k} does not preserve the stationary distribution")
    return np.array(close_permutations(gens, n), dtype=int).reshape(-1, n)


def _average_density(table: np.ndarray, rho) -> np.ndarray:
    return np.asarray(rho, dtype=float)[table].mean(axis=0)


def _average_momentum(table: np.ndarray, V, mode: str) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if mode == "paired":
        return np.mean([V[np.ix_(g, g)] for g in table], axis=0)
    if mode == "independent":
        rows = np.mean([V[g, :] for g in table], axis=0)
        return np.mean([rows[:, g] for g in table], axis=0)
    raise ValidationError(f"unknown averaging mode {mode!r}")


def g_average(chain: ReversibleChain, generators, rho, V, mode: str = "paired") -> tuple[np.ndarray, np.ndarray]:
    """ρ^G(x) = mean_g ρ(gx); V^G(x,y) = mean_g V(gx, gy), or mean_{g,g'} V(gx, g'y) in independent mode.

    The paired average keeps the continuity equation for every kernel-preserving group.
    """
    table = _group_table(chain, generators)
    return _average_density(table, rho), _average_momentum(table, V, mode)


def g_average_path(chain: ReversibleChain, generators, path: DensityPath, mode: str = "paired") -> DensityPath:
    table = _group_table(chain, generators)
    rhos = [_average_density(table, r) for r in path.rho]
    Vs = [_average_momentum(table, v, mode) for v in path.V]
    return DensityPath(path.times, np.array(rhos), np.array(Vs))


@dataclass(frozen=True, eq=False)
class ChainQuotient:
    base: ReversibleChain
    orbits: tuple[tuple[int, ...], ...]
    proj: np.ndarray
    chain: ReversibleChain

    def lift(self, f) -> np.ndarray:
        return np.asarray(f, dtype=float)[self.proj]


def quotient_chain_mm(chain: ReversibleChain, generators) -> ChainQuotient:
    """K*(x*, y*) = Σ_{y ∈ y*} K(x, y) at any representative x; π* sums over fibers."""
    _group_table(chain, generators)
    n = chain.size
    orbits = orbits_of([_as_permutation(g, n) for g in generators], n)
    proj = np.empty(n, dtype=int)
    for i, orb in enumerate(orbits):
        proj[list(orb)] = i
    indicator = np.zeros((n, len(orbits)))
    indicator[np.arange(n), proj] = 1.0
    summed = chain.kernel @ indicator

    reduced = summed[[orb[0] for orb in orbits]]
    spread = np.max(np.abs(summed - reduced[proj]))
    if spread > settings.metric_tol * 10:
        raise GroupNotKernelPreserving(f"fiber sums depend on the representative (spread {spread:.3e})")
    pi_star = indicator.T @ chain.stationary
    labels = orbit_labels(chain.labels, orbits)
    return ChainQuotient(chain, orbits, _frozen(proj, int), ReversibleChain(reduced, pi_star, labels))


def verify_w_isometry(chain: ReversibleChain, generators, rho0, rho1, grid: int = None) -> list[Check]:
    """𝒲* between quotient densities against 𝒲 between their lifts, plus the entropy identity."""
    cq = quotient_chain_mm(chain, generators)
    low = w_distance(cq.chain, rho0, rho1, grid=grid)
    high = w_distance(chain, cq.lift(rho0), cq.lift(rho1), grid=grid)
    rtol = settings.flow_isometry_rtol
    checks = [Check.equality("W isometry", low.value, high.value, rtol, relative=True)]
    for name, r in (("rho0", rho0), ("rho1", rho1)):
        checks.append(Check.equality(
            f"entropy lift ({name})",
            entropy_mm(cq.chain, r),
            entropy_mm(chain, cq.lift(r)),
            settings.metric_tol * 10,
            relative=True,
        ))
    return checks
