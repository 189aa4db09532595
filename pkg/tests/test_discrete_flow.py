"""Tests for the logarithmic-mean transport metric on reversible chains."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from orbit_transport.errors import GroupNotKernelPreserving, NegativeInput, ValidationError
from orbit_transport.services.discrete_flow import (
    DensityPath,
    ReversibleChain,
    action,
    alpha,
    continuity_residual,
    entropy_convexity_diagnostic,
    entropy_mm,
    g_average,
    g_average_path,
    path_energy,
    quotient_chain_mm,
    refinement_series,
    stationary_distribution,
    theta,
    theta_partial,
    verify_w_isometry,
    w_distance,
)
from orbit_transport.services.instances import lazy_cycle_chain, rotation, two_state_chain


def _two_state_oracle(eps: float) -> float:
    """Geodesic length ∫ (2θ(1+s, 1-s))^{-1/2} ds between (1-ε, 1+ε) and (1+ε, 1-ε)."""
    value, _ = quad(lambda s: (2.0 * theta(1.0 + s, 1.0 - s)) ** -0.5, -eps, eps, epsabs=1e-13)
    return value


def _make_random_pair(rng, chain):
    rho = rng.uniform(0.2, 2.0, size=chain.size)
    return rho / chain.mass(rho), rng.normal(size=(chain.size, chain.size))


# ── θ and α ───────────────────────────────────────────────────


def test_theta_diagonal():
    rng = np.random.default_rng(0)
    s = rng.uniform(0.01, 10, size=50)
    np.testing.assert_allclose(theta(s, s), s, rtol=1e-14)


def test_theta_with_zero():
    assert theta(3.0, 0.0) == 0.0
    assert theta(0.0, 2.0) == 0.0


def test_theta_closed_value():
    assert theta(math.e, 1.0) == pytest.approx(math.e - 1.0, abs=1e-12)


def test_theta_matches_quadrature():
    rng = np.random.default_rng(1)
    for s, t in rng.uniform(0.05, 5.0, size=(200, 2)):
        exact, _ = quad(lambda p: s ** p * t ** (1 - p), 0.0, 1.0, epsabs=1e-14, epsrel=1e-14)
        assert theta(s, t) == pytest.approx(exact, abs=1e-10)


def test_theta_near_diagonal_is_continuous():
    s = 1.0 + np.array([1e-7, 5e-6, 9.9e-6, 1.01e-5, 2e-5])
    np.testing.assert_allclose(theta(s, 1.0), (s + 1.0) / 2.0, rtol=1e-10)


def test_theta_mean_bounds_and_homogeneity():
    rng = np.random.default_rng(2)
    s, t = rng.uniform(0.01, 10, size=(2, 100))
    th = theta(s, t)
    assert np.all(th >= np.minimum(s, t) - 1e-12)
    assert np.all(th <= (s + t) / 2 + 1e-12)
    np.testing.assert_allclose(theta(3 * s, 3 * t), 3 * th, rtol=1e-12)
    np.testing.assert_allclose(theta(t, s), th, rtol=1e-15)


def test_theta_rejects_negative():
    with pytest.raises(NegativeInput):
        theta(-1.0, 1.0)


def test_theta_partial_matches_finite_difference():
    rng = np.random.default_rng(3)
    s, t = rng.uniform(0.1, 4.0, size=(2, 30))
    h = 1e-6
    numeric = (theta(s + h, t) - theta(s - h, t)) / (2 * h)
    np.testing.assert_allclose(theta_partial(s, t), numeric, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(theta_partial(s, s), 0.5)


def test_alpha_branches():
    assert alpha(0.0, 0.0, 0.0) == 0.0
    assert alpha(2.0, 1.0, 1.0) == pytest.approx(4.0)
    assert alpha(1.0, 0.0, 0.0) == math.inf


# ── Chains, action and entropy ────────────────────────────────


def test_stationary_distribution_is_found():
    chain = ReversibleChain(np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]))
    np.testing.assert_allclose(chain.stationary, [0.25, 0.5, 0.25], atol=1e-12)
    np.testing.assert_allclose(stationary_distribution(chain.kernel) @ chain.kernel, chain.stationary, atol=1e-12)


def test_detailed_balance_is_required():
    kernel = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    with pytest.raises(ValidationError, match="detailed balance"):
        ReversibleChain(kernel)


def test_irreducibility_is_required():
    with pytest.raises(ValidationError, match="irreducible"):
        ReversibleChain(np.eye(2))


def test_zero_momentum_has_zero_action():
    chain = lazy_cycle_chain(5)
    assert action(chain, np.ones(5), np.zeros((5, 5))) == 0.0


def test_two_state_action():
    V = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert action(two_state_chain(), np.ones(2), V) == pytest.approx(0.25)


def test_action_is_jointly_convex():
    rng = np.random.default_rng(4)
    chain = lazy_cycle_chain(5)
    for _ in range(200):
        (r0, v0), (r1, v1) = _make_random_pair(rng, chain), _make_random_pair(rng, chain)
        lam = rng.uniform()
        mixed = action(chain, lam * r0 + (1 - lam) * r1, lam * v0 + (1 - lam) * v1)
        assert mixed <= lam * action(chain, r0, v0) + (1 - lam) * action(chain, r1, v1) + 1e-10


def test_entropy_values():
    chain = two_state_chain()
    assert entropy_mm(chain, np.ones(2)) == 0.0
    assert entropy_mm(chain, np.array([2.0, 0.0])) == pytest.approx(math.log(2))
    rng = np.random.default_rng(5)
    for _ in range(20):
        rho = rng.uniform(0.1, 3.0, size=2)
        assert entropy_mm(chain, rho / chain.mass(rho)) >= -1e-15


# ── Continuity equation ───────────────────────────────────────


def test_stationary_path_has_no_residual():
    path = DensityPath.constant(np.ones(4), 5)
    assert np.max(np.abs(continuity_residual(lazy_cycle_chain(4), path))) == 0.0


def test_moving_path_without_momentum_has_residual():
    rho = np.array([[1.2, 0.8], [0.8, 1.2]])
    path = DensityPath(np.array([0.0, 1.0]), rho, np.zeros((1, 2, 2)))
    assert np.max(np.abs(continuity_residual(two_state_chain(), path))) == pytest.approx(0.4)


def test_linear_two_state_path_with_matching_momentum():
    # ρ(a) drops by 0.4 over unit time, carried by the antisymmetric momentum ±0.4
    rho = np.array([[1.2, 0.8], [0.8, 1.2]])
    V = np.array([[[0.0, 0.4], [-0.4, 0.0]]])
    path = DensityPath(np.array([0.0, 1.0]), rho, V)
    assert np.max(np.abs(continuity_residual(two_state_chain(), path))) <= 1e-12


def test_path_rejects_negative_density():
    with pytest.raises(NegativeInput):
        DensityPath(np.array([0.0, 1.0]), np.array([[1.0, 1.0], [2.1, -0.1]]), np.zeros((1, 2, 2)))


def test_path_energy_of_a_linear_path():
    rho = np.array([[1.2, 0.8], [0.8, 1.2]])
    V = np.array([[[0.0, 0.4], [-0.4, 0.0]]])
    path = DensityPath(np.array([0.0, 1.0]), rho, V)
    chain = two_state_chain()
    expected = 0.5 * (action(chain, rho[0], V[0]) + action(chain, rho[1], V[0]))
    assert path_energy(chain, path) == pytest.approx(expected)


# ── Solver ────────────────────────────────────────────────────


def test_equal_densities_have_zero_distance():
    chain = lazy_cycle_chain(4)
    result = w_distance(chain, np.ones(4), np.ones(4), grid=4)
    assert result.value == 0.0
    assert result.iterations == 0


def test_two_state_distance_matches_quadrature():
    eps = 0.1
    result = w_distance(two_state_chain(), [1 - eps, 1 + eps], [1 + eps, 1 - eps], grid=32)
    assert result.value == pytest.approx(_two_state_oracle(eps), abs=1e-4)
    assert result.residual <= 1e-8
    assert not result.mollified


def test_refinement_does_not_increase_the_value():
    series = refinement_series(two_state_chain(), [0.7, 1.3], [1.3, 0.7], grids=(8, 16, 32))
    values = [v for _, v in series]
    assert values[1] <= values[0] + 1e-6
    assert values[2] <= values[1] + 1e-6


def test_zero_density_is_mollified():
    result = w_distance(two_state_chain(), [2.0, 0.0], [1.0, 1.0], grid=8)
    assert result.mollified
    assert result.value > 0


def test_density_mass_is_checked():
    with pytest.raises(ValidationError, match="mass"):
        w_distance(two_state_chain(), [1.0, 2.0], [1.0, 1.0])


def test_distance_is_invariant_under_relabeling():
    kernel = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
    chain = ReversibleChain(kernel)
    flipped = ReversibleChain(kernel[::-1, ::-1])
    rho0 = np.array([1.5, 0.9, 0.7])
    rho1 = np.array([0.6, 1.1, 1.2])
    rho0, rho1 = rho0 / chain.mass(rho0), rho1 / chain.mass(rho1)
    a = w_distance(chain, rho0, rho1, grid=8).value
    b = w_distance(flipped, rho0[::-1], rho1[::-1], grid=8).value
    assert a == pytest.approx(b, rel=1e-5)


def test_entropy_convexity_diagnostic_is_finite_on_a_geodesic():
    result = w_distance(two_state_chain(), [0.7, 1.3], [1.3, 0.7], grid=8)
    assert math.isfinite(entropy_convexity_diagnostic(two_state_chain(), result.path, result.value))


# ── Symmetry ──────────────────────────────────────────────────


def test_g_average_of_invariant_pair_is_fixed():
    chain = lazy_cycle_chain(4)
    rho = np.array([1.5, 0.5, 1.5, 0.5])
    V = np.zeros((4, 4))
    V[0, 1] = V[2, 3] = 0.3
    V[1, 0] = V[3, 2] = -0.3
    rho_g, V_g = g_average(chain, [rotation(4, 2)], rho, V)
    np.testing.assert_allclose(rho_g, rho)
    np.testing.assert_allclose(V_g, V)


def test_g_average_with_trivial_group():
    rng = np.random.default_rng(6)
    chain = lazy_cycle_chain(5)
    rho, V = _make_random_pair(rng, chain)
    rho_g, V_g = g_average(chain, [], rho, V)
    np.testing.assert_array_equal(rho_g, rho)
    np.testing.assert_array_equal(V_g, V)


def test_g_average_does_not_raise_the_action():
    rng = np.random.default_rng(7)
    chain = lazy_cycle_chain(4)
    for _ in range(100):
        rho, V = _make_random_pair(rng, chain)
        rho_g, V_g = g_average(chain, [rotation(4, 2)], rho, V)
        assert action(chain, rho_g, V_g) <= action(chain, rho, V) + 1e-10


def test_paired_average_keeps_the_continuity_equation():
    rng = np.random.default_rng(8)
    chain = lazy_cycle_chain(6)
    gens = [rotation(6, 1)]
    rho = rng.uniform(0.5, 1.5, size=(3, 6))
    rho /= (rho @ chain.stationary)[:, None]
    path = DensityPath(np.linspace(0, 1, 3), rho, rng.normal(size=(2, 6, 6)))
    averaged = g_average_path(chain, gens, path)
    before = continuity_residual(chain, path)
    after = continuity_residual(chain, averaged)
    np.testing.assert_allclose(after, before.mean(axis=1, keepdims=True) * np.ones(6), atol=1e-12)


def test_unknown_averaging_mode():
    chain = lazy_cycle_chain(4)
    with pytest.raises(ValidationError):
        g_average(chain, [rotation(4, 2)], np.ones(4), np.zeros((4, 4)), mode="weighted")


def test_group_must_preserve_the_kernel():
    kernel = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
    with pytest.raises(GroupNotKernelPreserving):
        g_average(ReversibleChain(kernel), [(1, 0, 2)], np.ones(3), np.zeros((3, 3)))


def test_two_state_quotient_under_swap():
    cq = quotient_chain_mm(two_state_chain(), [(1, 0)])
    np.testing.assert_allclose(cq.chain.kernel, [[1.0]])
    np.testing.assert_allclose(cq.chain.stationary, [1.0])


def test_four_cycle_quotient_chain():
    cq = quotient_chain_mm(lazy_cycle_chain(4), [rotation(4, 2)])
    np.testing.assert_allclose(cq.chain.kernel, [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(cq.chain.stationary, [0.5, 0.5])
    np.testing.assert_array_equal(cq.lift([1.5, 0.5]), [1.5, 0.5, 1.5, 0.5])


def test_trivial_group_quotient_chain():
    chain = lazy_cycle_chain(5)
    cq = quotient_chain_mm(chain, [])
    np.testing.assert_array_equal(cq.chain.kernel, chain.kernel)
    assert cq.chain.labels == chain.labels


def test_w_isometry_on_the_four_cycle():
    checks = verify_w_isometry(lazy_cycle_chain(4), [rotation(4, 2)], [1.3, 0.7], [0.8, 1.2], grid=8)
    assert all(c.passed for c in checks), [(c.name, c.lhs, c.rhs) for c in checks]


def test_w_isometry_with_equal_densities():
    checks = verify_w_isometry(lazy_cycle_chain(4), [rotation(4, 2)], [1.0, 1.0], [1.0, 1.0], grid=4)
    assert checks[0].lhs == checks[0].rhs == 0.0
