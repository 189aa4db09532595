"""Tests for JSON input parsing and canonical output."""

import json

import numpy as np
import pytest

from orbit_transport.errors import ParseError, ValidationError
from orbit_transport.services.files import (
    chain_payload,
    graph_payload,
    group_payload,
    read_chain,
    read_density,
    read_generators,
    read_graph,
    read_measure,
    read_partition,
    read_reversible_chain,
    read_space,
    space_payload,
    write_json,
)
from orbit_transport.services.instances import cycle_space, hypercube_graph, lazy_cycle_chain


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return path


def test_read_space_defaults(tmp_path):
    path = _write(tmp_path, "space.json", {"distance": [[0, 1], [1, 0]]})
    space = read_space(path)
    assert space.labels == ("0", "1")
    np.testing.assert_array_equal(space.mass, [1.0, 1.0])


def test_malformed_json_reports_position(tmp_path):
    path = _write(tmp_path, "space.json", '{"distance": [[0, 1], [1, 0]],\n "measure": [1, 1,]}')
    with pytest.raises(ParseError, match="line 2"):
        read_space(path)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        read_space(tmp_path / "absent.json")


def test_schema_error_names_the_location(tmp_path):
    path = _write(tmp_path, "space.json", {"distance": [[0, "far"], [1, 0]]})
    with pytest.raises(ParseError, match="distance.0.1"):
        read_space(path)


def test_unknown_keys_are_rejected(tmp_path):
    path = _write(tmp_path, "group.json", {"generators": [[1, 0]], "order": 2})
    with pytest.raises(ParseError, match="order"):
        read_generators(path)


def test_ragged_distance_table(tmp_path):
    path = _write(tmp_path, "space.json", {"distance": [[0, 1], [1]]})
    with pytest.raises(ParseError, match="row 1"):
        read_space(path)


def test_non_metric_table_is_a_validation_error(tmp_path):
    path = _write(tmp_path, "space.json", {"distance": [[0, 1, 5], [1, 0, 1], [5, 1, 0]]})
    with pytest.raises(ValidationError):
        read_space(path)


def test_bare_list_measure_and_density(tmp_path):
    space = cycle_space(3)
    mu = read_measure(_write(tmp_path, "mu.json", [0.5, 0.25, 0.25]), space)
    np.testing.assert_array_equal(mu.weights, [0.5, 0.25, 0.25])
    rho = read_density(_write(tmp_path, "rho.json", {"rho": [1.0, 1.0]}))
    np.testing.assert_array_equal(rho, [1.0, 1.0])


def test_read_partition_with_conditionals(tmp_path):
    space = cycle_space(4)
    payload = {"leaves": [[0, 2], [1, 3]], "conditionals": [[0.5, 0, 0.5, 0], [0, 0.5, 0, 0.5]]}
    part = read_partition(_write(tmp_path, "leaves.json", payload), space)
    assert part.leaves == ((0, 2), (1, 3))


def test_read_chains(tmp_path):
    space = cycle_space(2)
    chain = read_chain(_write(tmp_path, "k.json", {"kernel": [[0.5, 0.5], [0.5, 0.5]]}), space)
    np.testing.assert_array_equal(chain.row(0).weights, [0.5, 0.5])
    rev = read_reversible_chain(_write(tmp_path, "rev.json", {"kernel": [[0, 1], [1, 0]], "labels": ["a", "b"]}))
    np.testing.assert_allclose(rev.stationary, [0.5, 0.5])
    assert rev.labels == ("a", "b")


def test_graph_edges_need_two_or_three_entries(tmp_path):
    path = _write(tmp_path, "g.json", {"vertices": ["a", "b"], "edges": [[0, 1, 1, 1]]})
    with pytest.raises(ParseError, match="edges.0"):
        read_graph(path)


def test_graph_default_weight_and_measure(tmp_path):
    G = read_graph(_write(tmp_path, "g.json", {"vertices": ["a", "b", "c"], "edges": [[0, 1]]}))
    assert G.omega[0, 1] == 1.0
    np.testing.assert_array_equal(G.measure, [1.0, 1.0, 1.0])


def test_payloads_read_back(tmp_path):
    space = cycle_space(5)
    write_json(tmp_path / "out" / "space.json", space_payload(space))
    again = read_space(tmp_path / "out" / "space.json")
    np.testing.assert_array_equal(again.dist, space.dist)
    assert again.labels == space.labels

    G = hypercube_graph(2)
    write_json(tmp_path / "g.json", graph_payload(G))
    np.testing.assert_array_equal(read_graph(tmp_path / "g.json").omega, G.omega)

    chain = lazy_cycle_chain(4)
    write_json(tmp_path / "c.json", chain_payload(chain))
    np.testing.assert_allclose(read_reversible_chain(tmp_path / "c.json").kernel, chain.kernel)

    write_json(tmp_path / "grp.json", group_payload([np.array([1, 0, 3, 2])]))
    assert read_generators(tmp_path / "grp.json") == [(1, 0, 3, 2)]
