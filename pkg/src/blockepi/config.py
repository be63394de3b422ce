"""Experiment configuration files and provenance headers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .experiment import DEFAULT_FRACTIONS, ExperimentGrid
from .centrality import MEASURES
from .graph import GraphParams
from .simulator import DiseaseParams, ScenarioConfig

_SCENARIO_SEED = {"prevention": 0.05, "intervention": 0.5}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    blocks: Path
    grid: ExperimentGrid
    graph_params: GraphParams
    out_dir: Path
    cache_dir: Optional[Path] = None
    top_k: Optional[int] = None
    dataset_name: Optional[str] = None

    def resolved(self) -> dict[str, Any]:
        """Plain-JSON view of every effective setting (defaults filled in)."""
        g = self.grid
        return {
            "blocks": str(self.blocks),
            "dataset_name": self.dataset_name,
            "graph_params": self.graph_params.as_dict(),
            "params": asdict(g.params),
            "scenario": asdict(g.scenario),
            "grid": {
                "n_sets": g.n_sets,
                "vaccine_fractions": list(g.vaccine_fractions),
                "measures": list(g.measures),
                "base_seed": g.base_seed,
                "stddev_ddof": g.stddev_ddof,
            },
            "top_k": self.top_k,
        }


def _section(raw: dict, key: str, allowed) -> dict:
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {key!r}: {', '.join(sorted(extra))}")
    return sec


def parse_config(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    known = {"blocks", "dataset_name", "graph_params", "params", "scenario", "grid", "out_dir", "cache_dir", "top_k"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(extra))}")
    if "blocks" not in raw:
        raise ConfigError("config needs a 'blocks' path")
    try:
        gp = GraphParams(**_section(raw, "graph_params", ("distance_scale", "epsilon")))
        params = DiseaseParams(**_section(raw, "params", DiseaseParams.__dataclass_fields__))
        sc = dict(_section(raw, "scenario", ("kind", "seed_fraction", "vaccination_day")))
        kind = sc.setdefault("kind", "prevention")
        if kind not in _SCENARIO_SEED:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        sc.setdefault("seed_fraction", _SCENARIO_SEED[kind])
        scenario = ScenarioConfig(**sc)
        gs = _section(raw, "grid", ("n_sets", "vaccine_fractions", "measures", "base_seed", "stddev_ddof"))
        grid = ExperimentGrid(
            n_sets=int(gs.get("n_sets", 20)),
            vaccine_fractions=tuple(gs.get("vaccine_fractions", DEFAULT_FRACTIONS)),
            measures=tuple(gs.get("measures", MEASURES)),
            base_seed=int(gs.get("base_seed", 0)),
            params=params,
            scenario=scenario,
            stddev_ddof=int(gs.get("stddev_ddof", 0)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    cache = raw.get("cache_dir")
    top_k = raw.get("top_k")
    if top_k is not None and (not isinstance(top_k, int) or top_k < 0):
        raise ConfigError("top_k must be a non-negative integer")
    return ExperimentConfig(
        blocks=base_dir / raw["blocks"],
        grid=grid,
        graph_params=gp,
        out_dir=base_dir / raw.get("out_dir", "results"),
        cache_dir=base_dir / cache if cache else None,
        top_k=top_k,
        dataset_name=raw.get("dataset_name"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(raw, path.parent)


def config_hash(settings: dict) -> str:
    return hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()[:16]


def provenance_header(settings: dict, base_seed: Optional[int] = None) -> str:
    """``#``-prefixed first line for every CSV the CLI writes."""
    seed = "none" if base_seed is None else str(base_seed)
    return f"# blockepi {__version__} base_seed={seed} config_sha256={config_hash(settings)}"
