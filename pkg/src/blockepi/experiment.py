"""Seeded experiment grids: simulation sets x vaccine fractions x measures."""

from __future__ import annotations

import csv
import hashlib
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import centrality
from ._io import open_output
from .centrality import CentralityScores, rank
from .graph import CountyGraph
from .simulator import (
    DiseaseParams,
    ScenarioConfig,
    SimulationResult,
    compute_doses,
    run_simulation,
    select_seed_blocks,
)

NO_VACCINATION = "none"
DEFAULT_FRACTIONS = (0.0, 0.30, 0.50, 0.75, 0.90)
SUMMARY_FIELDS = ("measure", "fraction", "mean_peak_pct", "stddev_peak_pct", "mean_total_infected")
TIMESERIES_FIELDS = ("measure", "fraction", "day", "mean_pct_latent", "mean_pct_infectious", "mean_pct_infected")
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExperimentGrid:
    n_sets: int = 20
    vaccine_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    measures: tuple[str, ...] = centrality.MEASURES
    base_seed: int = 0
    params: DiseaseParams = field(default_factory=DiseaseParams)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig.prevention)
    stddev_ddof: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vaccine_fractions", tuple(float(f) for f in self.vaccine_fractions))
        object.__setattr__(self, "measures", tuple(self.measures))
        if self.n_sets < 1:
            raise ValueError("n_sets must be >= 1")
        if any(not 0.0 <= f <= 1.0 for f in self.vaccine_fractions):
            raise ValueError("vaccine fractions must lie in [0, 1]")
        if 0.0 not in self.vaccine_fractions:
            raise ValueError("vaccine fractions must include 0 (the no-vaccination column)")
        unknown = set(self.measures) - set(centrality.MEASURES)
        if unknown:
            raise ValueError(f"unknown measure(s): {', '.join(sorted(unknown))}")

    def cells(self) -> list[tuple[str, float]]:
        """Cell keys in output order: no-vaccination first, then measure-major."""
        keys = [(NO_VACCINATION, 0.0)]
        fracs = [f for f in self.vaccine_fractions if f > 0]
        keys += [(m, f) for m in self.measures for f in fracs]
        return keys


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def set_seed_sequence(base_seed: int, set_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed & _U64, set_index])


def cell_rng(base_seed: int, set_index: int, measure: str, fraction: float) -> np.random.Generator:
    """Independent stream per cell; adding cells never perturbs existing ones."""
    ss = np.random.SeedSequence(
        [base_seed & _U64, set_index, _stable_hash(measure), _stable_hash(repr(float(fraction)))]
    )
    return np.random.Generator(np.random.PCG64(ss))


def static_rankings(graph: CountyGraph, measures: Sequence[str], scores: Optional[Mapping[str, CentralityScores]] = None) -> dict[str, list[str]]:
    """Rankings for every deterministic measure (random is drawn per set)."""
    out = {}
    for m in measures:
        if m == "random":
            continue
        s = scores[m] if scores and m in scores else centrality.compute(graph, m)
        out[m] = rank(s)
    return out


def run_set(
    graph: CountyGraph,
    grid: ExperimentGrid,
    set_index: int,
    rankings: Optional[Mapping[str, Sequence[str]]] = None,
) -> dict[tuple[str, float], SimulationResult]:
    if not 0 <= set_index < grid.n_sets:
        raise ValueError(f"set_index {set_index} outside [0, {grid.n_sets})")
    rankings = dict(rankings) if rankings is not None else static_rankings(graph, grid.measures)
    set_rng = np.random.Generator(np.random.PCG64(set_seed_sequence(grid.base_seed, set_index)))
    seeds = select_seed_blocks(graph, grid.params.seed_block_fraction, set_rng)
    if "random" in grid.measures:
        rseed = int(set_rng.integers(0, 2**63))
        rankings["random"] = rank(centrality.random_centrality(graph, rseed))

    results = {}
    for measure, fraction in grid.cells():
        rng = cell_rng(grid.base_seed, set_index, measure, fraction)
        ranking = rankings[measure] if measure != NO_VACCINATION else []
        doses = compute_doses(graph, fraction)
        res = run_simulation(graph, grid.params, grid.scenario, ranking, doses, rng, seeds)
        res.final_state = None
        results[(measure, fraction)] = res
    return results


@dataclass
class CellStats:
    measure: str
    fraction: float
    peaks: np.ndarray
    totals: np.ndarray
    curves: np.ndarray  # days x (S, E, I, R, infected), mean percentages
    ddof: int = 0

    @property
    def mean_peak_pct(self) -> float:
        return float(np.mean(self.peaks))

    @property
    def stddev_peak_pct(self) -> float:
        if len(self.peaks) <= self.ddof:
            return 0.0
        return float(np.std(self.peaks, ddof=self.ddof))

    @property
    def mean_total_infected(self) -> float:
        return float(np.mean(self.totals))


@dataclass
class AggregateStats:
    cells: dict[tuple[str, float], CellStats] = field(default_factory=dict)

    def __getitem__(self, key) -> CellStats:
        return self.cells[key]

    def mean_peaks(self, measure: str, fractions: Sequence[float]) -> list[float]:
        out = []
        for f in fractions:
            key = (NO_VACCINATION, 0.0) if f == 0 else (measure, float(f))
            out.append(self.cells[key].mean_peak_pct)
        return out


def _percent_curve(res: SimulationResult) -> np.ndarray:
    rows = [(r.S, r.E, r.I, r.R, r.infected) for r in res.records]
    total = res.records[0].total
    return 100.0 * np.asarray(rows, dtype=float) / total


def aggregate(grid: ExperimentGrid, set_results: Sequence[Mapping[tuple[str, float], SimulationResult]]) -> AggregateStats:
    """Reduce per-set results in set-index order; pads short runs with their final day."""
    stats = AggregateStats()
    for key in grid.cells():
        runs = [sr[key] for sr in set_results]
        curves = [_percent_curve(r) for r in runs]
        length = max(len(c) for c in curves)
        padded = np.stack([np.vstack([c, np.repeat(c[-1:], length - len(c), axis=0)]) for c in curves])
        stats.cells[key] = CellStats(
            key[0],
            key[1],
            np.array([r.peak_pct for r in runs]),
            np.array([r.cumulative_infections for r in runs], dtype=float),
            padded.mean(axis=0),
            grid.stddev_ddof,
        )
    return stats


_WORKER: dict = {}


def _init_worker(graph, grid, rankings):
    _WORKER.update(graph=graph, grid=grid, rankings=rankings)


def _worker_set(set_index: int):
    return run_set(_WORKER["graph"], _WORKER["grid"], set_index, _WORKER["rankings"])


def run_grid(
    graph: CountyGraph,
    grid: ExperimentGrid,
    jobs: int = 1,
    rankings: Optional[Mapping[str, Sequence[str]]] = None,
) -> AggregateStats:
    """Run every set, optionally across ``jobs`` worker processes.

    Each set and cell owns its random stream and the reduction is in set
    order, so the output does not depend on ``jobs``.
    """
    if rankings is None:
        rankings = static_rankings(graph, grid.measures)
    indices = range(grid.n_sets)
    if jobs <= 1 or grid.n_sets == 1:
        set_results = [run_set(graph, grid, i, rankings) for i in indices]
    else:
        methods = multiprocessing.get_all_start_methods()
        ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
        with ProcessPoolExecutor(
            max_workers=jobs, mp_context=ctx, initializer=_init_worker, initargs=(graph, grid, dict(rankings))
        ) as pool:
            set_results = list(pool.map(_worker_set, indices))
    return aggregate(grid, set_results)


# --------------------------------------------------------------------------
# exports


def _fmt_fraction(f: float) -> str:
    return f"{f:g}"


def _writer(fh, header: Optional[str]):
    if header:
        fh.write(header.rstrip("\n") + "\n")
    return csv.writer(fh, lineterminator="\n")


def export_summary(stats: AggregateStats, dest, header: Optional[str] = None) -> None:
    """Per-cell peak mean/stddev and mean total infected, four decimals.

    ``dest`` is a path (written atomically) or an open text stream.
    """
    with open_output(dest) as fh:
        _write_summary(stats, fh, header)


def _write_summary(stats, fh, header):
    w = _writer(fh, header)
    w.writerow(SUMMARY_FIELDS)
    for cell in stats.cells.values():
        w.writerow([
            cell.measure,
            _fmt_fraction(cell.fraction),
            f"{cell.mean_peak_pct:.4f}",
            f"{cell.stddev_peak_pct:.4f}",
            f"{cell.mean_total_infected:.4f}",
        ])


def export_timeseries(stats: AggregateStats, dest, header: Optional[str] = None) -> None:
    with open_output(dest) as fh:
        _write_timeseries(stats, fh, header)


def _write_timeseries(stats, fh, header):
    w = _writer(fh, header)
    w.writerow(TIMESERIES_FIELDS)
    for cell in stats.cells.values():
        for day, row in enumerate(cell.curves):
            w.writerow([
                cell.measure, _fmt_fraction(cell.fraction), day,
                f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[4]:.6f}",
            ])


def default_top_k(graph) -> int:
    return math.ceil(0.10 * len(graph))


def top_central(scores_list: Sequence[CentralityScores], k: int) -> dict[str, list[str]]:
    """Block id -> sorted measures that place it in their top ``k``."""
    hits: dict[str, set[str]] = {}
    for s in scores_list:
        for bid in rank(s)[: max(k, 0)]:
            hits.setdefault(bid, set()).add(s.measure)
    return {bid: sorted(hits[bid]) for bid in sorted(hits)}


def export_top_central(graph, scores_list: Sequence[CentralityScores], k: int, dest, header: Optional[str] = None) -> None:
    """GIS overlay table: each top-``k`` block once, labelled by its measures."""
    for s in scores_list:
        if set(s.scores) != set(graph.ids):
            raise ValueError(f"{s.measure} scores do not cover the graph")
    rows = top_central(scores_list, k)
    with open_output(dest) as fh:
        w = _writer(fh, header)
        w.writerow(["block_id", "measures"])
        for bid, measures in rows.items():
            w.writerow([bid, "+".join(measures)])
