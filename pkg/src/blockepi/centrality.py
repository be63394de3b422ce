"""Weighted centrality measures used to prioritise blocks for vaccination."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

from ._io import open_output
from .graph import WeightedDigraph

MEASURES = ("out_degree", "in_degree", "eigenvector", "eigenvector_in", "inverse_betweenness", "random")


class CentralityError(RuntimeError):
    pass


class ConvergenceError(CentralityError):
    def __init__(self, iterations: int, delta: float):
        super().__init__(f"power iteration did not converge in {iterations} iterations (last delta {delta:.3g})")
        self.iterations = iterations
        self.delta = delta


class StaleCacheError(CentralityError):
    pass


@dataclass(frozen=True)
class CentralityScores:
    measure: str
    scores: dict[str, float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise CentralityError(f"unknown measure {self.measure!r}")

    def as_array(self, ids) -> np.ndarray:
        return np.array([self.scores[i] for i in ids])


def _scores(graph: WeightedDigraph, measure: str, values, **meta) -> CentralityScores:
    return CentralityScores(measure, {k: float(v) for k, v in zip(graph.ids, values)}, meta)


# --------------------------------------------------------------------------
# degree


def out_degree_centrality(graph: WeightedDigraph) -> CentralityScores:
    n = len(graph)
    denom = max(n - 1, 1)
    return _scores(graph, "out_degree", [math.fsum(row) / denom for row in graph.weights])


def in_degree_centrality(graph: WeightedDigraph) -> CentralityScores:
    n = len(graph)
    denom = max(n - 1, 1)
    return _scores(graph, "in_degree", [math.fsum(col) / denom for col in graph.weights.T])


# --------------------------------------------------------------------------
# eigenvector


def power_iteration(a: np.ndarray, max_iter: int = 1000, tol: float = 1e-10) -> tuple[np.ndarray, int]:
    """Principal non-negative eigenvector of ``a`` with unit L2 norm.

    Iterates on ``a + c*I`` with ``c`` the mean row sum, which keeps the
    eigenvectors and the Perron root's dominance but breaks the period-2
    oscillation of bipartite-like structures. ``c`` scales with ``a`` so the
    result is invariant under positive rescaling of the weights.
    """
    n = a.shape[0]
    shift = a.sum() / n if n else 0.0
    x = np.full(n, 1.0 / math.sqrt(n))
    delta = math.inf
    for it in range(1, max_iter + 1):
        y = a @ x + shift * x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            raise CentralityError("adjacency matrix annihilates the start vector")
        y /= norm
        delta = float(np.max(np.abs(y - x)))
        x = y
        if delta < tol:
            return x, it
    raise ConvergenceError(max_iter, delta)


def _eigen(graph, measure, a, max_iter, tol):
    x, iters = power_iteration(a, max_iter, tol)
    return _scores(graph, measure, x, max_iter=max_iter, tol=tol, iterations=iters)


def eigenvector_centrality(graph: WeightedDigraph, max_iter: int = 1000, tol: float = 1e-10) -> CentralityScores:
    """Eigenvector centrality over out-edges: x_u proportional to sum_v W(u->v) x_v."""
    return _eigen(graph, "eigenvector", graph.weights, max_iter, tol)


def eigenvector_in_centrality(graph: WeightedDigraph, max_iter: int = 1000, tol: float = 1e-10) -> CentralityScores:
    """Same as :func:`eigenvector_centrality` on the transposed weights (in-edges)."""
    return _eigen(graph, "eigenvector_in", np.ascontiguousarray(graph.weights.T), max_iter, tol)


# --------------------------------------------------------------------------
# inverse betweenness (Brandes over reciprocal weights)


@njit(cache=True, nogil=True)
def _source_dependencies(lengths, edges, sources):
    """Brandes dependency vectors for each source, via dense O(n^2) Dijkstra.

    ``out[k, w]`` is the dependency of ``sources[k]`` on node ``w``; the
    source's own entry is zero.
    """
    n = lengths.shape[0]
    out = np.zeros((sources.shape[0], n))
    dist = np.empty(n)
    sigma = np.empty(n)
    delta = np.empty(n)
    settled = np.empty(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    for k in range(sources.shape[0]):
        s = sources[k]
        dist[:] = np.inf
        sigma[:] = 0.0
        delta[:] = 0.0
        settled[:] = False
        dist[s] = 0.0
        sigma[s] = 1.0
        count = 0
        while True:
            v = -1
            best = np.inf
            for i in range(n):
                if not settled[i] and dist[i] < best:
                    best = dist[i]
                    v = i
            if v < 0:
                break
            settled[v] = True
            stack[count] = v
            count += 1
            for w in range(n):
                if edges[v, w] and not settled[w]:
                    alt = dist[v] + lengths[v, w]
                    if alt < dist[w]:
                        dist[w] = alt
                        sigma[w] = sigma[v]
                    elif alt == dist[w]:
                        sigma[w] += sigma[v]
        for j in range(count - 1, -1, -1):
            w = stack[j]
            coeff = (1.0 + delta[w]) / sigma[w]
            for v in range(n):
                if edges[v, w] and settled[v] and v != w and dist[v] + lengths[v, w] == dist[w]:
                    delta[v] += sigma[v] * coeff
        for w in range(n):
            if w != s:
                out[k, w] = delta[w]
    return out


def _reciprocal_lengths(graph: WeightedDigraph) -> np.ndarray:
    w = graph.weights[graph.edges]
    if (w <= 0).any() or not np.isfinite(w).all():
        raise CentralityError("inverse betweenness needs finite positive edge weights")
    lengths = np.zeros_like(graph.weights)
    lengths[graph.edges] = 1.0 / w
    return lengths


def inverse_betweenness_centrality(
    graph: WeightedDigraph, parallel: bool = True, workers: Optional[int] = None
) -> CentralityScores:
    """Betweenness on reciprocal weights, endpoints excluded, unnormalized.

    Sources are independent single-source Dijkstra runs; with ``parallel``
    they are split across threads. Per-source dependency vectors are always
    summed in source order, so both modes give bit-identical scores.
    """
    n = len(graph)
    lengths = _reciprocal_lengths(graph)
    edges = np.ascontiguousarray(graph.edges)
    sources = np.arange(n, dtype=np.int64)
    total = np.zeros(n)
    if parallel and n > 1:
        workers = workers or 4
        chunks = [c for c in np.array_split(sources, min(workers * 4, n)) if len(c)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _source_dependencies(lengths, edges, c), chunks))
        for part in parts:
            for row in part:
                total += row
    else:
        for s in sources:
            total += _source_dependencies(lengths, edges, sources[s : s + 1])[0]
    return _scores(graph, "inverse_betweenness", total, parallel=bool(parallel))


# --------------------------------------------------------------------------
# random baseline


def random_centrality(graph: WeightedDigraph, seed: int) -> CentralityScores:
    rng = np.random.Generator(np.random.PCG64(seed))
    return _scores(graph, "random", rng.random(len(graph)), seed=int(seed))


def compute(graph: WeightedDigraph, measure: str, *, seed: Optional[int] = None, parallel: bool = True) -> CentralityScores:
    if measure == "out_degree":
        return out_degree_centrality(graph)
    if measure == "in_degree":
        return in_degree_centrality(graph)
    if measure == "eigenvector":
        return eigenvector_centrality(graph)
    if measure == "eigenvector_in":
        return eigenvector_in_centrality(graph)
    if measure == "inverse_betweenness":
        return inverse_betweenness_centrality(graph, parallel=parallel)
    if measure == "random":
        if seed is None:
            raise CentralityError("random centrality needs a seed")
        return random_centrality(graph, seed)
    raise CentralityError(f"unknown measure {measure!r}")


def rank(scores: CentralityScores) -> list[str]:
    """Block ids by score descending, ties by id ascending."""
    return sorted(scores.scores, key=lambda k: (-scores.scores[k], k))


# --------------------------------------------------------------------------
# score cache


def graph_fingerprint(graph: WeightedDigraph) -> str:
    payload = json.dumps({"ids": sorted(graph.ids), "params": graph.params or {}}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def cache_scores(scores: CentralityScores, path, graph: WeightedDigraph, header: Optional[str] = None) -> None:
    if scores.measure == "random":
        raise CentralityError("random centrality is redrawn per simulation set and is never cached")
    path = Path(path)
    gfp = graph_fingerprint(graph)
    sidecar = {
        "measure": scores.measure,
        "meta": scores.meta,
        "graph_fingerprint": gfp,
        "fingerprint": hashlib.sha256(
            json.dumps([gfp, scores.measure, scores.meta], sort_keys=True).encode()
        ).hexdigest(),
    }
    with open_output(path) as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["block_id", "score"])
        for k in sorted(scores.scores):
            writer.writerow([k, repr(scores.scores[k])])
    _sidecar(path).write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_scores(path, graph: WeightedDigraph) -> CentralityScores:
    path = Path(path)
    try:
        header = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise StaleCacheError(f"{path}: missing fingerprint sidecar") from None
    if header.get("graph_fingerprint") != graph_fingerprint(graph):
        raise StaleCacheError(f"{path}: cached scores belong to a different graph")
    scores = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            scores[row["block_id"]] = float(row["score"])
    if set(scores) != set(graph.ids):
        raise StaleCacheError(f"{path}: cached node set differs from the graph")
    return CentralityScores(header["measure"], {k: scores[k] for k in graph.ids}, header.get("meta", {}))
