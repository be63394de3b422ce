"""Command-line entry point: ``blockepi <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 internal fault.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, centrality
from ._io import open_output
from .centrality import MEASURES, CentralityError, ConvergenceError, StaleCacheError
from .config import ConfigError, load_config, provenance_header
from .county_data import DatasetError, load_blocks, synth_county, write_blocks
from .experiment import (
    NO_VACCINATION,
    default_top_k,
    export_summary,
    export_timeseries,
    export_top_central,
    run_grid,
    static_rankings,
)
from .graph import (
    GraphError,
    GraphParams,
    build_radius_graph,
    build_touches_graph,
    build_weighted_graph,
    export_graph,
    load_graph_csv,
)
from .simulator import (
    DiseaseParams,
    ScenarioConfig,
    SimulationFault,
    compute_doses,
    run_simulation,
    summary_json,
    write_timeseries,
)

log = logging.getLogger("blockepi")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage().strip()}")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _graph_params(args) -> GraphParams:
    return GraphParams(args.scale, args.epsilon)


def _add_graph_flags(p):
    p.add_argument("--scale", type=float, default=10000.0, help="distance scale (default 10000)")
    p.add_argument("--epsilon", type=float, default=0.00001, help="distance guard (default 0.00001)")


def _add_disease_flags(p):
    d = DiseaseParams()
    p.add_argument("--contact-rate", type=int, default=d.contact_rate)
    p.add_argument("--transmissibility", type=float, default=d.transmissibility)
    p.add_argument("--mobility", type=float, default=d.mobility)
    p.add_argument("--latent-period", type=int, default=d.latent_period)
    p.add_argument("--infectious-period", type=int, default=d.infectious_period)
    p.add_argument("--seed-blocks", type=float, default=d.seed_block_fraction, help="fraction of blocks seeded")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    ds = synth_county(args.blocks, args.population, args.urban, args.seed)
    settings = {"cmd": "synth", "blocks": args.blocks, "population": args.population, "urban": args.urban, "seed": args.seed}
    with open_output(args.out) as fh:
        fh.write(provenance_header(settings, args.seed) + "\n")
        write_blocks(ds, fh)
    return 0


def cmd_build_graph(args) -> int:
    ds = load_blocks(args.blocks)
    gp = _graph_params(args)
    if args.representation == "weighted":
        g = build_weighted_graph(ds, gp)
    elif args.representation == "touches":
        g = build_touches_graph(ds)
    else:
        if args.radius is None:
            raise UsageError("--radius is required for radius representations")
        g = build_radius_graph(ds, args.radius, args.representation == "radius-scaled")
    settings = {
        "cmd": "build-graph", "blocks_sha256": _file_digest(args.blocks), "representation": args.representation,
        "radius": args.radius, **gp.as_dict(),
    }
    with open_output(args.out) as fh:
        fh.write(provenance_header(settings) + "\n")
        export_graph(g, fh)
    return 0


def _load_graph(args):
    if bool(args.graph) == bool(args.blocks):
        raise UsageError("give exactly one of --graph or --blocks")
    if args.graph:
        return load_graph_csv(args.graph), {"graph_sha256": _file_digest(args.graph)}
    gp = _graph_params(args)
    return build_weighted_graph(load_blocks(args.blocks), gp), {"blocks_sha256": _file_digest(args.blocks), **gp.as_dict()}


def cmd_centrality(args) -> int:
    graph, settings = _load_graph(args)
    if args.measure == "random" and args.out:
        raise UsageError("random centrality is redrawn per simulation set and cannot be cached")
    scores = centrality.compute(graph, args.measure, seed=args.seed, parallel=not args.serial)
    settings.update(cmd="centrality", measure=args.measure, seed=args.seed)
    header = provenance_header(settings, args.seed)
    if args.out:
        centrality.cache_scores(scores, args.out, graph, header=header)
    else:
        out = sys.stdout
        out.write(header + "\n")
        out.write("block_id,score\n")
        for bid in centrality.rank(scores):
            out.write(f"{bid},{scores.scores[bid]!r}\n")
    return 0


def cmd_simulate(args) -> int:
    ds = load_blocks(args.blocks)
    gp = _graph_params(args)
    graph = build_weighted_graph(ds, gp)
    params = DiseaseParams(
        args.contact_rate, args.transmissibility, args.mobility, args.latent_period, args.infectious_period, args.seed_blocks
    )
    seed_fraction = args.seed_fraction
    if seed_fraction is None:
        seed_fraction = 0.05 if args.scenario == "prevention" else 0.5
    scenario = ScenarioConfig(args.scenario, seed_fraction, args.vaccination_day)
    if args.measure == NO_VACCINATION or args.fraction == 0:
        ranking: list[str] = []
    else:
        scores = centrality.compute(graph, args.measure, seed=args.seed)
        ranking = centrality.rank(scores)
    doses = compute_doses(graph, args.fraction)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    result = run_simulation(graph, params, scenario, ranking, doses, rng, seed=args.seed)
    settings = {
        "cmd": "simulate", "blocks_sha256": _file_digest(args.blocks), **gp.as_dict(),
        "params": asdict(params), "scenario": asdict(scenario),
        "measure": args.measure, "fraction": args.fraction, "seed": args.seed,
    }
    write_timeseries(result, args.out, header=provenance_header(settings, args.seed))
    if args.summary:
        with open_output(args.summary) as fh:
            fh.write(summary_json(result))
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.out_dir
    ds = load_blocks(cfg.blocks, cfg.dataset_name)
    graph = build_weighted_graph(ds, cfg.graph_params)
    settings = {**cfg.resolved(), "blocks_sha256": _file_digest(cfg.blocks)}
    settings.pop("blocks")
    header = provenance_header(settings, cfg.grid.base_seed)

    scores = {}
    for m in cfg.grid.measures:
        if m == "random":
            continue
        cache = cfg.cache_dir / f"{m}.csv" if cfg.cache_dir else None
        if cache is not None and cache.exists():
            scores[m] = centrality.load_scores(cache, graph)
            log.info("loaded cached %s scores from %s", m, cache)
            continue
        scores[m] = centrality.compute(graph, m)
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            centrality.cache_scores(scores[m], cache, graph, header=header)
    rankings = static_rankings(graph, cfg.grid.measures, scores)

    stats = run_grid(graph, cfg.grid, jobs=args.jobs, rankings=rankings)
    export_summary(stats, out_dir / "summary.csv", header=header)
    export_timeseries(stats, out_dir / "timeseries.csv", header=header)
    if scores:
        k = cfg.top_k if cfg.top_k is not None else default_top_k(graph)
        export_top_central(graph, list(scores.values()), k, out_dir / "top_central.csv", header=header)
    return 0


def cmd_top_blocks(args) -> int:
    graph, settings = _load_graph(args)
    measures = [m.strip() for m in args.measures.split(",") if m.strip()]
    unknown = set(measures) - set(MEASURES)
    if unknown:
        raise UsageError(f"unknown measure(s): {', '.join(sorted(unknown))}")
    scores = [centrality.compute(graph, m, seed=args.seed) for m in measures]
    k = args.k if args.k is not None else default_top_k(graph)
    settings.update(cmd="top-blocks", measures=measures, k=k, seed=args.seed)
    export_top_central(graph, scores, k, args.out, header=provenance_header(settings, args.seed))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blockepi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"blockepi {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic county block CSV")
    p.add_argument("--blocks", type=int, required=True, help="number of blocks")
    p.add_argument("--population", type=int, required=True)
    p.add_argument("--urban", type=float, default=0.5, help="share of blocks in the urban core")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="build a county graph and export its edges")
    p.add_argument("--blocks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--representation", choices=("weighted", "touches", "radius", "radius-scaled"), default="weighted"
    )
    p.add_argument("--radius", type=float)
    _add_graph_flags(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("centrality", help="compute (and optionally cache) one centrality measure")
    p.add_argument("--graph")
    p.add_argument("--blocks")
    p.add_argument("--measure", choices=MEASURES, required=True)
    p.add_argument("--out", help="score cache CSV (a .json sidecar is written next to it)")
    p.add_argument("--serial", action="store_true", help="single-threaded betweenness")
    p.add_argument("--seed", type=int, default=0, help="seed for the random measure")
    _add_graph_flags(p)
    p.set_defaults(func=cmd_centrality)

    p = sub.add_parser("simulate", help="run one simulation")
    p.add_argument("--blocks", required=True)
    p.add_argument("--scenario", choices=("prevention", "intervention"), default="prevention")
    p.add_argument("--measure", choices=MEASURES + (NO_VACCINATION,), default=NO_VACCINATION)
    p.add_argument("--fraction", type=float, default=0.0, help="vaccine supply as a share of the population")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-fraction", type=float, help="share of a seeded block's people infected on day 0")
    p.add_argument("--vaccination-day", type=int, default=6)
    p.add_argument("--out", required=True, help="time-series CSV")
    p.add_argument("--summary", help="summary JSON")
    _add_disease_flags(p)
    _add_graph_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a seeded experiment grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
    p.add_argument("--out-dir", help="override the config's out_dir")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("top-blocks", help="export the top-k blocks per measure as a GIS overlay table")
    p.add_argument("--graph")
    p.add_argument("--blocks")
    p.add_argument("--measures", default="out_degree,in_degree,inverse_betweenness")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    p.set_defaults(func=cmd_top_blocks)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetError, GraphError, ConfigError, StaleCacheError, ValueError, OSError) as exc:
        print(f"blockepi {args.command}: {exc}", file=sys.stderr)
        return 1
    except (SimulationFault, ConvergenceError, CentralityError) as exc:
        print(f"blockepi {args.command}: internal fault: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"blockepi {args.command}: internal fault: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
