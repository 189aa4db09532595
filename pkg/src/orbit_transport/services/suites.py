"""Randomized verification suites over symmetric instances.

Each suite draws `trials` instances from a seeded generator (or reuses a
supplied instance with fresh random data) and returns the flat list of
checks. Suites never raise on a failed identity; the check records it.
"""

import logging
import math

import numpy as np

from orbit_transport.config import settings
from orbit_transport.services import equivariant, graph_calculus, ollivier
from orbit_transport.services.core_spaces import (
    GroupAction,
    check_metric_foliation,
    check_mm_foliation,
    check_submetry,
    close_permutations,
    orbit_partition,
    quotient,
)
from orbit_transport.services.discrete_flow import (
    DensityPath,
    ReversibleChain,
    action,
    continuity_residual,
    g_average,
    g_average_path,
    quotient_chain_mm,
    verify_w_isometry,
)
from orbit_transport.services.graph_calculus import WeightedGraph
from orbit_transport.services.instances import (
    coordinate_swaps,
    hypercube_graph,
    lazy_cycle_chain,
    random_chain,
    random_invariant_chain,
    random_invariant_graph,
    random_invariant_space,
    random_measure,
    rotation,
)
from orbit_transport.services.reports import Check
from orbit_transport.services.transport import wasserstein

logger = logging.getLogger(__name__)

SUITES = ("lift", "ollivier", "cd", "flow")


def _cd_parameters(rng: np.random.Generator, diameter: float, pinned=None) -> tuple[float, float, float]:
    """K of either sign, N' > 1 and t, with Kθ² kept below (N'-1)π² so τ stays finite.

    Entries of `pinned` (K, N', t) that are not None replace the draws.
    """
    n_prime = float(rng.uniform(1.5, 10.0))
    t = float(rng.uniform(0.0, 1.0))
    scale = (n_prime - 1.0) * math.pi ** 2 / max(diameter, 1.0) ** 2
    K = float(rng.uniform(-2.0, 0.9 * scale))
    if pinned is None:
        return K, n_prime, t
    return tuple(drawn if fixed is None else float(fixed) for drawn, fixed in zip((K, n_prime, t), pinned))


def lift_suite(rng: np.random.Generator, trials: int, action_: GroupAction = None, cd_params=None) -> list[Check]:
    checks = []
    for trial in range(trials):
        act = action_ if action_ is not None else random_invariant_space(rng)
        q = quotient(act)
        p = (1.0, 2.0, 3.0)[trial % 3]
        mu0, mu1 = random_measure(rng, q.qspace), random_measure(rng, q.qspace)
        checks += equivariant.verify_lift_isometry(q, mu0, mu1, p)
        checks.append(equivariant.cost_lift_identity(q, wasserstein(mu0, mu1, p).coupling))

        psi = rng.normal(size=q.qspace.size) * 3.0
        checks.append(equivariant.verify_transform_commutation(q, psi, p))
        checks += equivariant.verify_functional_lifts(q, mu0, float(rng.uniform(1.0, 10.0)))

        # densities against the quotient mass, positive everywhere
        nu0 = random_measure(rng, q.qspace, zeros=False)
        nu1 = random_measure(rng, q.qspace, zeros=False)
        pi = wasserstein(nu0, nu1, 2.0).coupling
        K, n_prime, t = _cd_parameters(rng, float(q.qspace.dist.max()), cd_params)
        checks.append(equivariant.verify_cd_rhs_equality(
            q, nu0.density, nu1.density, pi, K, n_prime, t,
        ))

        checks.append(Check.from_result("projection is a submetry", check_submetry(q.space, q.qspace, q.proj), settings.metric_tol))
        part = orbit_partition(q)
        checks.append(Check.from_result("orbits form a metric foliation", check_metric_foliation(part), settings.metric_tol))
        checks.append(Check.from_result("orbit conditionals form a mm-foliation", check_mm_foliation(part), settings.solver_tol))
    logger.info(f"lift suite: {len(checks)} checks over {trials} trials")
    return checks


def ollivier_suite(rng: np.random.Generator, trials: int, action_: GroupAction = None) -> list[Check]:
    checks = []
    for _ in range(trials):
        act = action_ if action_ is not None else random_invariant_space(rng, max_points=10)
        q = quotient(act)
        chain = random_invariant_chain(rng, act)
        checks += ollivier.verify_ollivier_preservation(chain, q)

        loose = random_chain(rng, act.base)
        k = ollivier.min_coarse_ricci(loose)
        averaged = ollivier.g_averaged_chain(loose, act)
        checks.append(Check.lower_bound("group-averaged chain keeps the bound", ollivier.min_coarse_ricci(averaged), k, settings.ollivier_tol))
        checks.append(Check.equality(
            "averaged chain is invariant", float(not ollivier.is_invariant_chain(averaged, act, tol=settings.metric_tol * 10)), 0.0, 0.0,
        ))
    logger.info(f"ollivier suite: {len(checks)} checks over {trials} trials")
    return checks


def cd_suite(rng: np.random.Generator, trials: int, graph: WeightedGraph = None, generators=None, N: float = None) -> list[Check]:
    checks = []
    for trial in range(trials):
        if graph is not None:
            G, gens = graph, list(generators or [])
        elif trial == 0:
            G, gens = hypercube_graph(3), coordinate_swaps(3)
        else:
            G, gens = random_invariant_graph(rng)
        qg = graph_calculus.quotient_graph(G, gens)
        fstar = rng.normal(size=qg.graph.size)
        gstar = rng.normal(size=qg.graph.size)
        checks += graph_calculus.verify_lift_commutation(G, gens, fstar, gstar, p=float(rng.choice([1.0, 2.0, 3.0])))
        checks += graph_calculus.verify_cd_quotient(G, gens, math.inf)
        drawn = float(rng.uniform(1.0, 10.0))
        checks += graph_calculus.verify_cd_quotient(G, gens, drawn if N is None else N)
        if G.n_components == 1:
            checks.append(graph_calculus.verify_quotient_hop_metric(G, gens))
            checks.append(Check.from_result(
                "orbits form a graph metric foliation",
                graph_calculus.is_graph_metric_foliation(G, qg.orbits),
                0.0,
            ))
    logger.info(f"cd suite: {len(checks)} checks over {trials} trials")
    return checks


def flow_suite(rng: np.random.Generator, trials: int, chain: ReversibleChain = None, generators=None, grid: int = None) -> list[Check]:
    checks = []
    if chain is None:
        chain, generators = lazy_cycle_chain(4), [rotation(4, 2)]
    generators = [tuple(int(v) for v in g) for g in generators or []]
    table = np.array(close_permutations(generators, chain.size), dtype=int)
    n = chain.size
    for _ in range(trials):
        rho = rng.uniform(0.2, 2.0, size=n)
        rho /= chain.mass(rho)
        V = rng.normal(size=(n, n))
        rho_g, V_g = g_average(chain, generators, rho, V)
        checks.append(Check.lower_bound(
            "group average does not raise the action", action(chain, rho, V), action(chain, rho_g, V_g), settings.solver_tol,
        ))

        rho_next = rng.uniform(0.2, 2.0, size=n)
        rho_next /= chain.mass(rho_next)
        path = DensityPath(np.array([0.0, 1.0]), np.vstack([rho, rho_next]), V[None])
        before = continuity_residual(chain, path)
        after = continuity_residual(chain, g_average_path(chain, generators, path))
        expected = before[:, table].mean(axis=1)
        checks.append(Check.equality(
            "continuity residual commutes with averaging", float(np.max(np.abs(after - expected))), 0.0, settings.metric_tol * 100,
        ))

    if trials:
        cq = quotient_chain_mm(chain, generators)
        for _ in range(max(1, trials // 10)):
            r0 = rng.uniform(0.5, 1.5, size=cq.chain.size)
            r1 = rng.uniform(0.5, 1.5, size=cq.chain.size)
            r0 /= cq.chain.mass(r0)
            r1 /= cq.chain.mass(r1)
            checks += verify_w_isometry(chain, generators, r0, r1, grid=grid)
    logger.info(f"flow suite: {len(checks)} checks over {trials} trials")
    return checks


def run_suite(name: str, seed: int = None, trials: int = None, **instance) -> list[Check]:
    """Run one suite, or every suite for "all", each from a fresh generator seeded with `seed`.

    Instance keys: action, graph, generators, chain, grid, N and cd_params = (K, N', t).
    """
    seed = settings.default_seed if seed is None else seed
    trials = settings.default_trials if trials is None else trials
    rng = np.random.default_rng(seed)
    if name == "all":
        checks = []
        for suite in SUITES:
            checks += run_suite(suite, seed, trials, **instance)
        return checks
    if name == "lift":
        return lift_suite(rng, trials, instance.get("action"), instance.get("cd_params"))
    if name == "ollivier":
        return ollivier_suite(rng, trials, instance.get("action"))
    if name == "cd":
        return cd_suite(rng, trials, instance.get("graph"), instance.get("generators"), instance.get("N"))
    if name == "flow":
        return flow_suite(rng, trials, instance.get("chain"), instance.get("generators"), instance.get("grid"))
    raise ValueError(f"unknown suite {name!r}")
