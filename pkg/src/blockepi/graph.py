"""County graph construction.

The normative representation is a complete directed graph over populated
blocks with gravity-style weights

    W(u -> v) = Pop(u) * Pop(v) / (scale * dist(centroid(u), v) + epsilon)

stored densely. Three rejected adjacency-style representations (polygon
touching, fixed radius, population-scaled radius) are kept for comparison.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from .county_data import CountyDataset, DatasetError, distances_to_block


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphParams:
    distance_scale: float = 10000.0
    epsilon: float = 0.00001

    def __post_init__(self):
        if not (self.distance_scale > 0 and math.isfinite(self.distance_scale)):
            raise GraphError("distance_scale must be positive")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise GraphError("epsilon must be positive")

    def as_dict(self) -> dict:
        return {"distance_scale": self.distance_scale, "epsilon": self.epsilon}


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    """Dense directed graph. ``edges[u, v]`` marks an edge, ``weights`` its weight.

    Node order is the order of ``ids``; every consumer that needs a
    deterministic order relies on it.
    """

    ids: tuple[str, ...]
    weights: np.ndarray
    edges: np.ndarray
    directed: bool = True
    params: Optional[dict] = None

    def __post_init__(self):
        n = len(self.ids)
        w = np.asarray(self.weights, dtype=float)
        e = np.asarray(self.edges, dtype=bool)
        if w.shape != (n, n) or e.shape != (n, n):
            raise GraphError("weights/edges must be |V| x |V|")
        if len(set(self.ids)) != n:
            raise GraphError("duplicate node id")
        if e.diagonal().any():
            raise GraphError("self-loops are not allowed")
        w = np.where(e, w, 0.0)
        w.setflags(write=False)
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id!r}") from None

    def degree_counts(self) -> np.ndarray:
        return self.edges.sum(axis=1)

    @classmethod
    def from_edge_list(cls, edges: Iterable[tuple[str, str, float]], nodes: Sequence[str] = ()) -> "WeightedDigraph":
        edges = list(edges)
        ids = sorted(set(nodes) | {s for s, _, _ in edges} | {t for _, t, _ in edges})
        idx = {k: i for i, k in enumerate(ids)}
        n = len(ids)
        w = np.zeros((n, n))
        e = np.zeros((n, n), dtype=bool)
        for s, t, x in edges:
            w[idx[s], idx[t]] = x
            e[idx[s], idx[t]] = True
        return cls(tuple(ids), w, e)


@dataclass(frozen=True, eq=False)
class CountyGraph(WeightedDigraph):
    """Complete weighted digraph over populated blocks plus contact tables.

    ``order[u]`` lists u's out-neighbours by normalized weight descending
    (ties by id ascending) and ``cumulative[u]`` the matching running sums,
    whose last entry is exactly 1.
    """

    populations: np.ndarray = field(default=None)
    out_degree: np.ndarray = field(init=False)
    in_degree: np.ndarray = field(init=False)
    order: np.ndarray = field(init=False)
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        super().__post_init__()
        n = len(self.ids)
        if n < 2:
            raise GraphError("a county graph needs at least 2 populated blocks")
        if list(self.ids) != sorted(self.ids):
            raise GraphError("county graph nodes must be in ascending id order")
        pops = np.asarray(self.populations, dtype=np.int64)
        if pops.shape != (n,) or (pops <= 0).any():
            raise GraphError("every county graph node needs a positive population")
        off = ~np.eye(n, dtype=bool)
        if not np.array_equal(self.edges, off):
            raise GraphError("county graph must be complete")
        w = self.weights
        if not (np.isfinite(w[off]).all() and (w[off] > 0).all()):
            raise GraphError("county graph weights must be finite and positive")
        pops.setflags(write=False)
        object.__setattr__(self, "populations", pops)
        out_deg = np.array([math.fsum(row) for row in w])
        in_deg = np.array([math.fsum(col) for col in w.T])
        order, cum = _sampling_tables(w, out_deg)
        for a in (out_deg, in_deg, order, cum):
            a.setflags(write=False)
        object.__setattr__(self, "out_degree", out_deg)
        object.__setattr__(self, "in_degree", in_deg)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "cumulative", cum)

    @property
    def total_population(self) -> int:
        return int(self.populations.sum())

    @classmethod
    def from_weights(cls, ids, populations, weights, params: Optional[dict] = None) -> "CountyGraph":
        ids = list(ids)
        perm = sorted(range(len(ids)), key=lambda i: ids[i])
        w = np.asarray(weights, dtype=float)[np.ix_(perm, perm)]
        n = len(ids)
        return cls(
            tuple(ids[i] for i in perm),
            w,
            ~np.eye(n, dtype=bool),
            params=params,
            populations=np.asarray(populations)[perm],
        )


@njit(cache=True)
def _kahan_cumsum(values):
    out = np.empty_like(values)
    s = 0.0
    c = 0.0
    for i in range(values.shape[0]):
        y = values[i] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[i] = s
    return out


def _sampling_tables(w: np.ndarray, out_deg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = w.shape[0]
    order = np.empty((n, n - 1), dtype=np.int64)
    cum = np.empty((n, n - 1))
    for u in range(n):
        nbrs = np.delete(np.arange(n, dtype=np.int64), u)
        norm = w[u, nbrs] / out_deg[u]
        # lexsort: last key is primary; node index order == id order
        perm = np.lexsort((nbrs, -norm))
        order[u] = nbrs[perm]
        c = _kahan_cumsum(norm[perm])
        c[-1] = 1.0
        cum[u] = c
    return order, cum


def gravity_weights(dataset: CountyDataset, params: GraphParams = GraphParams()):
    """Return (ids, populations, distance matrix, weight matrix) for populated blocks."""
    blocks = sorted(dataset.populated(), key=lambda b: b.id)
    n = len(blocks)
    if n < 2:
        raise GraphError(f"dataset {dataset.name!r} has fewer than 2 populated blocks")
    xs = np.array([b.centroid.x for b in blocks])
    ys = np.array([b.centroid.y for b in blocks])
    pops = np.array([b.population for b in blocks], dtype=np.int64)
    dist = np.empty((n, n))
    for j, b in enumerate(blocks):
        dist[:, j] = distances_to_block(xs, ys, b)
    np.fill_diagonal(dist, 0.0)
    pf = pops.astype(float)
    w = np.outer(pf, pf) / (params.distance_scale * dist + params.epsilon)
    np.fill_diagonal(w, 0.0)
    return [b.id for b in blocks], pops, dist, w


def build_weighted_graph(dataset: CountyDataset, params: GraphParams = GraphParams()) -> CountyGraph:
    ids, pops, _, w = gravity_weights(dataset, params)
    return CountyGraph(
        tuple(ids), w, ~np.eye(len(ids), dtype=bool), params=params.as_dict(), populations=pops
    )


def build_touches_graph(dataset: CountyDataset) -> WeightedDigraph:
    """Undirected unit-weight adjacency of populated blocks whose polygons touch.

    Touching means sharing at least one boundary point with disjoint
    interiors; the predicate is delegated to shapely.
    """
    from shapely import STRtree
    from shapely.geometry import Polygon as ShapelyPolygon

    blocks = sorted(dataset.populated(), key=lambda b: b.id)
    missing = [b.id for b in blocks if b.polygon is None]
    if missing:
        raise DatasetError(f"touches graph needs polygons; missing for {', '.join(missing[:5])}")
    geoms = [ShapelyPolygon(b.polygon.rings[0], b.polygon.rings[1:]) for b in blocks]
    n = len(blocks)
    e = np.zeros((n, n), dtype=bool)
    tree = STRtree(geoms)
    left, right = tree.query(geoms, predicate="touches")
    e[left, right] = True
    e[right, left] = True
    np.fill_diagonal(e, False)
    return WeightedDigraph(tuple(b.id for b in blocks), e.astype(float), e, directed=False)


def build_radius_graph(dataset: CountyDataset, r: float, population_scaled: bool = False) -> WeightedDigraph:
    """Directed unit-weight graph with u -> v iff dist(centroid(u), v) < r_u.

    With ``population_scaled`` the radius shrinks to r * (1 - Pop(u)/1000),
    so blocks of 1000+ people get no out-edges at all.
    """
    if not r > 0:
        raise GraphError("radius must be positive")
    blocks = sorted(dataset.populated(), key=lambda b: b.id)
    xs = np.array([b.centroid.x for b in blocks])
    ys = np.array([b.centroid.y for b in blocks])
    n = len(blocks)
    dist = np.empty((n, n))
    for j, b in enumerate(blocks):
        dist[:, j] = distances_to_block(xs, ys, b)
    radius = np.full(n, float(r))
    if population_scaled:
        radius = r * (1.0 - np.array([b.population for b in blocks]) / 1000.0)
    e = dist < radius[:, None]
    np.fill_diagonal(e, False)
    return WeightedDigraph(tuple(b.id for b in blocks), e.astype(float), e)


def scaled_radius(r: float, population: int) -> float:
    return r * (1.0 - population / 1000.0)


def sample_contact_block(graph: CountyGraph, origin: str, target: float) -> str:
    """Pick the out-neighbour whose cumulative normalized weight first reaches ``target``."""
    u = graph.index(origin)
    k = int(np.searchsorted(graph.cumulative[u], target, side="left"))
    return graph.ids[graph.order[u, k]]


def sample_contact_indices(graph: CountyGraph, origin: str, targets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sample_contact_block`; returns node indices."""
    u = graph.index(origin)
    k = np.searchsorted(graph.cumulative[u], np.asarray(targets), side="left")
    return graph.order[u, k]


def export_graph(graph: WeightedDigraph, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["src", "dst", "weight"])
    src, dst = np.nonzero(graph.edges)
    for u, v in zip(src, dst):
        writer.writerow([graph.ids[u], graph.ids[v], f"{graph.weights[u, v]:.17g}"])


def load_graph_csv(path) -> WeightedDigraph:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for i, row in enumerate(reader, start=1):
            try:
                rows.append((row["src"], row["dst"], float(row["weight"])))
            except (KeyError, TypeError, ValueError):
                raise GraphError(f"{path} row {i}: malformed edge") from None
    return WeightedDigraph.from_edge_list(rows)
