"""Tests for finite spaces, group actions, quotients and foliation checks."""

import numpy as np
import pytest

from orbit_transport.errors import (
    ClosureExceedsCap,
    ConditionalNotSupported,
    GeneratorNotIsometry,
    GeneratorNotMeasurePreserving,
    NotSurjective,
    ValidationError,
)
from orbit_transport.services.core_spaces import (
    CheckResult,
    Disintegration,
    FiniteMetricMeasureSpace,
    LeafPartition,
    build_group,
    check_metric_foliation,
    check_mm_foliation,
    check_submetry,
    close_permutations,
    compose,
    disintegrate,
    inverse,
    orbit_census,
    orbit_partition,
    orbits_of,
    quotient,
)
from orbit_transport.services.instances import cycle_space, random_invariant_space, rotation


def _make_space(dist, mass=None, labels=None):
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    return FiniteMetricMeasureSpace(
        tuple(labels or [str(i) for i in range(n)]),
        dist,
        np.ones(n) if mass is None else np.asarray(mass, dtype=float),
    )


def _make_line(positions, mass=None):
    x = np.asarray(positions, dtype=float)
    return _make_space(np.abs(x[:, None] - x[None, :]), mass)


# ── Spaces ────────────────────────────────────────────────────


def test_space_rejects_triangle_violation():
    with pytest.raises(ValidationError, match="triangle"):
        _make_space([[0, 1, 5], [1, 0, 1], [5, 1, 0]])


def test_space_rejects_nonpositive_mass():
    with pytest.raises(ValidationError, match="mass"):
        _make_space([[0, 1], [1, 0]], mass=[1.0, 0.0])


def test_space_rejects_zero_distance_between_distinct_points():
    with pytest.raises(ValidationError, match="positive"):
        _make_space([[0, 0], [0, 0]])


def test_space_arrays_are_read_only():
    X = cycle_space(4)
    with pytest.raises(ValueError):
        X.dist[0, 1] = 7.0


# ── Groups ────────────────────────────────────────────────────


def test_rotation_by_two_generates_z2():
    action = build_group(cycle_space(4), [rotation(4, 2)])
    assert action.order == 2
    assert action.effective


def test_empty_generator_list_gives_trivial_group():
    action = build_group(cycle_space(4), [])
    assert action.order == 1
    assert action.elements == ((0, 1, 2, 3),)


def test_rotation_by_one_generates_z4():
    assert build_group(cycle_space(4), [rotation(4, 1)]).order == 4


def test_closure_contains_inverses():
    elements = set(close_permutations([rotation(5, 1), (0, 4, 3, 2, 1)], 5))
    assert len(elements) == 10
    for g in elements:
        assert inverse(g) in elements
        for h in elements:
            assert compose(g, h) in elements


def test_closure_cap():
    with pytest.raises(ClosureExceedsCap):
        close_permutations([rotation(6, 1), (1, 0, 2, 3, 4, 5)], 6, cap=100)


def test_non_isometry_is_named():
    X = _make_line([0, 1, 3])
    with pytest.raises(GeneratorNotIsometry, match="generator 0"):
        build_group(X, [(1, 0, 2)])


def test_non_measure_preserving_generator():
    X = cycle_space(4, mass=[1, 2, 1, 2])
    with pytest.raises(GeneratorNotMeasurePreserving):
        build_group(X, [rotation(4, 1)])


def test_generator_must_be_a_bijection():
    with pytest.raises(ValidationError, match="bijection"):
        build_group(cycle_space(4), [(0, 0, 1, 2)])


def test_orbits_are_sorted_by_smallest_point():
    assert orbits_of([(2, 1, 0, 4, 3)], 5) == ((0, 2), (1,), (3, 4))


# ── Quotients ─────────────────────────────────────────────────


def test_four_cycle_quotient():
    q = quotient(build_group(cycle_space(4), [rotation(4, 2)]))
    assert q.orbits == ((0, 2), (1, 3))
    np.testing.assert_array_equal(q.qspace.dist, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(q.qspace.mass, [2, 2])
    np.testing.assert_array_equal(q.proj, [0, 1, 0, 1])
    assert q.qspace.labels == ("{0,2}", "{1,3}")


def test_trivial_group_quotient_is_the_base():
    X = _make_line([0, 1, 3], mass=[1, 2, 3])
    q = quotient(build_group(X, []))
    np.testing.assert_array_equal(q.qspace.dist, X.dist)
    np.testing.assert_array_equal(q.qspace.mass, X.mass)
    assert q.qspace.labels == X.labels


def test_transitive_action_has_one_orbit():
    X = _make_space([[0, 1], [1, 0]], mass=[1.5, 1.5])
    q = quotient(build_group(X, [(1, 0)]))
    assert q.qspace.size == 1
    assert q.qspace.mass[0] == pytest.approx(3.0)


def test_quotient_distance_is_one_lipschitz():
    rng = np.random.default_rng(7)
    for _ in range(20):
        q = quotient(random_invariant_space(rng))
        lifted = q.qspace.dist[np.ix_(q.proj, q.proj)]
        assert np.all(lifted <= q.space.dist + 1e-12)


def test_disintegration_reconstructs_reference_mass():
    X = cycle_space(6, mass=[1, 2, 3, 1, 2, 3])
    q = quotient(build_group(X, [rotation(6, 3)]))
    family = disintegrate(q)
    np.testing.assert_allclose(family.reconstruct(q.qspace.mass), X.mass)
    np.testing.assert_allclose(family.family.sum(axis=1), 1.0)


# ── Orbit census ──────────────────────────────────────────────


def test_free_action_census():
    census = orbit_census(build_group(cycle_space(4), [rotation(4, 2)]))
    assert census.isotropy_orders == [1, 1, 1, 1]
    assert census.principal_fraction == pytest.approx(1.0)


def test_fixed_point_census():
    X = _make_space([[0, 1, 1], [1, 0, 2], [1, 2, 0]], mass=[1, 2, 2], labels=["a", "b", "c"])
    census = orbit_census(build_group(X, [(0, 2, 1)]))
    assert census.isotropy_orders == [2, 1, 1]
    assert census.principal.points == [1, 2]
    assert census.principal_fraction == pytest.approx(4 / 5)


def test_trivial_group_census():
    census = orbit_census(build_group(_make_line([0, 1, 3]), []))
    assert census.principal_fraction == pytest.approx(1.0)


# ── Submetries and foliations ─────────────────────────────────


def test_quotient_projection_is_a_submetry():
    rng = np.random.default_rng(3)
    for _ in range(10):
        q = quotient(random_invariant_space(rng))
        assert check_submetry(q.space, q.qspace, q.proj)


def test_identity_is_a_submetry():
    X = _make_line([0, 1, 3])
    assert check_submetry(X, X, [0, 1, 2])


def test_inconsistent_collapse_is_not_a_submetry():
    X = _make_line([0, 1, 3])
    Y = _make_line([0, 1])
    result = check_submetry(X, Y, [0, 0, 1])
    assert not result
    assert result.witness is not None


def test_submetry_needs_surjection():
    X = _make_line([0, 1, 3])
    with pytest.raises(NotSurjective):
        check_submetry(X, X, [0, 0, 1])


def test_orbits_form_a_metric_foliation():
    q = quotient(build_group(cycle_space(6), [rotation(6, 2)]))
    assert check_metric_foliation(orbit_partition(q))


def test_singleton_leaves_form_a_metric_foliation():
    X = _make_line([0, 1, 3])
    assert check_metric_foliation(LeafPartition(X, ((0,), (1,), (2,))))


def test_unequal_spacing_breaks_the_foliation():
    X = _make_line([0, 1, 3])
    result = check_metric_foliation(LeafPartition(X, ((0, 2), (1,))))
    assert not result
    assert result.max_deviation == pytest.approx(1.0)


def test_partition_must_cover_every_point():
    with pytest.raises(ValidationError):
        LeafPartition(_make_line([0, 1, 3]), ((0, 1),))


def test_orbit_conditionals_form_an_mm_foliation():
    q = quotient(build_group(cycle_space(6), [rotation(6, 3)]))
    result = check_mm_foliation(orbit_partition(q))
    assert result
    assert result.max_deviation == pytest.approx(0.0, abs=1e-9)


def test_singleton_leaves_form_an_mm_foliation():
    X = _make_line([0, 1, 3])
    part = LeafPartition(X, ((0,), (1,), (2,)), Disintegration(np.eye(3)))
    assert check_mm_foliation(part)


def test_perturbed_conditional_breaks_the_mm_foliation():
    q = quotient(build_group(cycle_space(6), [rotation(6, 3)]))
    family = np.array(disintegrate(q).family)
    family[0, 0], family[0, 3] = 0.7, 0.3
    part = LeafPartition(q.space, q.orbits, Disintegration(family))
    result = check_mm_foliation(part)
    assert not result
    assert result.max_deviation > 0.1
    assert result.witness[0] == 0


def test_mm_foliation_result_holds_plain_python_values():
    rng = np.random.default_rng(21)
    for _ in range(10):
        q = quotient(random_invariant_space(rng, max_points=8))
        result = check_mm_foliation(orbit_partition(q))
        assert type(result.holds) is bool
        assert type(result.max_deviation) is float
        assert bool(result) is True


def test_check_result_truth_of_numpy_flags():
    assert bool(CheckResult(np.bool_(True))) is True
    assert bool(CheckResult(np.float64(1.0) <= 0.5)) is False


def test_conditional_outside_its_leaf():
    q = quotient(build_group(cycle_space(4), [rotation(4, 2)]))
    family = np.array(disintegrate(q).family)
    family[0] = [0.5, 0.5, 0.0, 0.0]
    with pytest.raises(ConditionalNotSupported):
        check_mm_foliation(LeafPartition(q.space, q.orbits, Disintegration(family)))
