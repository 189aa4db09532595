"""JSON input files and their canonical re-emission."""

import json
import logging
from pathlib import Path

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, model_validator

from orbit_transport.errors import ParseError
from orbit_transport.services.core_spaces import FiniteMetricMeasureSpace, LeafPartition, Disintegration
from orbit_transport.services.discrete_flow import ReversibleChain
from orbit_transport.services.graph_calculus import WeightedGraph
from orbit_transport.services.ollivier import MarkovChain
from orbit_transport.services.reports import canonical_json
from orbit_transport.services.transport import Measure

logger = logging.getLogger(__name__)


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceFile(_Schema):
    labels: list[str] | None = None
    distance: list[list[float]]
    measure: list[float] | None = None

    @model_validator(mode="after")
    def _square(self):
        n = len(self.distance)
        for i, row in enumerate(self.distance):
            if len(row) != n:
                raise ValueError(f"distance row {i} has {len(row)} entries, expected {n}")
        return self


class GroupFile(_Schema):
    generators: list[list[int]]


class PartitionFile(_Schema):
    leaves: list[list[int]]
    conditionals: list[list[float]] | None = None


class MeasureFile(_Schema):
    weights: list[float]


class ChainFile(_Schema):
    kernel: list[list[float]]
    stationary: list[float] | None = None
    labels: list[str] | None = None


class GraphFile(_Schema):
    vertices: list[str | int]
    edges: list[list[float]]
    measure: list[float] | None = None


class DensityFile(_Schema):
    rho: list[float]


def _load(path: str | Path, schema: type[BaseModel], bare_key: str = None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if bare_key is not None and isinstance(raw, list):
        raw = {bare_key: raw}
    try:
        return schema.model_validate(raw)
    except pydantic.ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ParseError(f"{path}: at {where}: {first['msg']}") from e


def read_space(path) -> FiniteMetricMeasureSpace:
    data = _load(path, SpaceFile)
    n = len(data.distance)
    labels = data.labels or [str(i) for i in range(n)]
    mass = data.measure if data.measure is not None else [1.0] * n
    return FiniteMetricMeasureSpace(tuple(labels), np.array(data.distance, dtype=float), np.array(mass, dtype=float))


def read_generators(path) -> list[tuple[int, ...]]:
    return [tuple(g) for g in _load(path, GroupFile).generators]


def read_partition(path, space: FiniteMetricMeasureSpace) -> LeafPartition:
    data = _load(path, PartitionFile)
    conditionals = None
    if data.conditionals is not None:
        conditionals = Disintegration(np.array(data.conditionals, dtype=float))
    return LeafPartition(space, tuple(tuple(leaf) for leaf in data.leaves), conditionals)


def read_measure(path, space: FiniteMetricMeasureSpace) -> Measure:
    return Measure(space, np.array(_load(path, MeasureFile, bare_key="weights").weights, dtype=float))


def read_chain(path, space: FiniteMetricMeasureSpace) -> MarkovChain:
    return MarkovChain(space, np.array(_load(path, ChainFile).kernel, dtype=float))


def read_reversible_chain(path) -> ReversibleChain:
    data = _load(path, ChainFile)
    stationary = None if data.stationary is None else np.array(data.stationary, dtype=float)
    return ReversibleChain(np.array(data.kernel, dtype=float), stationary, data.labels)


def read_graph(path) -> WeightedGraph:
    data = _load(path, GraphFile)
    for k, edge in enumerate(data.edges):
        if len(edge) not in (2, 3):
            raise ParseError(f"{path}: at edges.{k}: expected [i, j] or [i, j, weight]")
    return WeightedGraph.from_edges(data.vertices, data.edges, data.measure)


def read_density(path) -> np.ndarray:
    return np.array(_load(path, DensityFile, bare_key="rho").rho, dtype=float)


# ── Emission ──────────────────────────────────────────────────


def space_payload(space: FiniteMetricMeasureSpace) -> dict:
    return {"labels": list(space.labels), "distance": space.dist.tolist(), "measure": space.mass.tolist()}


def group_payload(generators) -> dict:
    return {"generators": [list(map(int, g)) for g in generators]}


def graph_payload(G: WeightedGraph) -> dict:
    return {
        "vertices": list(G.labels),
        "edges": [[i, j, w] for i, j, w in G.edges()],
        "measure": G.measure.tolist(),
    }


def chain_payload(chain) -> dict:
    payload = {"kernel": chain.kernel.tolist()}
    if isinstance(chain, ReversibleChain):
        payload["stationary"] = chain.stationary.tolist()
        payload["labels"] = list(chain.labels)
    return payload


def coupling_payload(coupling) -> dict:
    return {"plan": coupling.plan.tolist(), "marginal_residual": coupling.marginal_residual()}


def write_json(path: str | Path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload))
    logger.info(f"Wrote {path}")
