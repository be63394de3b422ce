"""Stochastic SEIR metapopulation simulation over a county graph.

Each block carries integer S/E/I/R counts and two day-bucket arrays:
``latent[n, m]`` holds people with ``m`` days left before becoming
infectious, ``infectious[n, m]`` those with ``m`` days left before
recovering. One simulated day is

1. scheduled vaccination (done by :func:`run_simulation` before the day),
2. bucket shift (``m+1 -> m``, top bucket emptied),
3. contact generation, blocks in ascending id order,
4. E -> I and I -> R transitions out of bucket 0,
5. county totals reported.

All randomness comes from one PCG64 stream per simulation, consumed in the
exact order above. The contact loop is compiled with numba; the compiled
kernel and :func:`reference_contacts` draw from the same generator and are
interchangeable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from ._io import open_output
from .graph import CountyGraph


class SimulationFault(RuntimeError):
    """Internal consistency failure; a run must never continue past one."""


@dataclass(frozen=True)
class DiseaseParams:
    contact_rate: int = 20
    transmissibility: float = 0.05
    mobility: float = 0.99
    latent_period: int = 2
    infectious_period: int = 3
    seed_block_fraction: float = 0.01

    def __post_init__(self):
        if int(self.contact_rate) != self.contact_rate or self.contact_rate < 0:
            raise ValueError("contact_rate must be a non-negative integer")
        for name in ("transmissibility", "mobility", "seed_block_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.latent_period < 1 or self.infectious_period < 1:
            raise ValueError("latent and infectious periods must be >= 1 day")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "prevention"
    seed_fraction: float = 0.05
    vaccination_day: int = 6

    def __post_init__(self):
        if self.kind not in ("prevention", "intervention"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not 0.0 < self.seed_fraction <= 1.0:
            raise ValueError("seed_fraction must lie in (0, 1]")
        if self.vaccination_day < 1:
            raise ValueError("vaccination_day must be >= 1")

    @classmethod
    def prevention(cls) -> "ScenarioConfig":
        return cls("prevention", 0.05)

    @classmethod
    def intervention(cls, vaccination_day: int = 6) -> "ScenarioConfig":
        return cls("intervention", 0.5, vaccination_day)


@dataclass(frozen=True)
class BlockState:
    N: int
    S: int
    E: int
    I: int
    R: int
    V: int
    M_E: dict[int, int]
    M_I: dict[int, int]


@dataclass(frozen=True)
class DayRecord:
    day: int
    S: int
    E: int
    I: int
    R: int
    V: int
    total: int

    @property
    def infected(self) -> int:
        return self.E + self.I

    def pct(self, count: int) -> float:
        return 100.0 * count / self.total

    @property
    def pct_infected(self) -> float:
        return self.pct(self.infected)


@dataclass
class SimulationState:
    N: np.ndarray
    S: np.ndarray
    E: np.ndarray
    I: np.ndarray
    R: np.ndarray
    V: np.ndarray
    latent: np.ndarray
    infectious: np.ndarray
    rng: np.random.Generator
    day: int = 0
    cumulative_infections: int = 0

    @classmethod
    def initial(cls, graph: CountyGraph, params: DiseaseParams, rng: np.random.Generator) -> "SimulationState":
        n = len(graph)
        z = lambda: np.zeros(n, dtype=np.int64)  # noqa: E731
        return cls(
            N=graph.populations.copy(),
            S=graph.populations.copy(),
            E=z(),
            I=z(),
            R=z(),
            V=z(),
            latent=np.zeros((n, params.latent_period + 1), dtype=np.int64),
            infectious=np.zeros((n, params.infectious_period + 1), dtype=np.int64),
            rng=rng,
        )

    def block(self, k: int) -> BlockState:
        return BlockState(
            int(self.N[k]), int(self.S[k]), int(self.E[k]), int(self.I[k]), int(self.R[k]), int(self.V[k]),
            {m: int(c) for m, c in enumerate(self.latent[k])},
            {m: int(c) for m, c in enumerate(self.infectious[k])},
        )

    def record(self) -> DayRecord:
        return DayRecord(
            self.day, int(self.S.sum()), int(self.E.sum()), int(self.I.sum()), int(self.R.sum()),
            int(self.V.sum()), int(self.N.sum()),
        )

    def check(self) -> None:
        bad = []
        if (self.S + self.E + self.I + self.R != self.N).any():
            bad.append("S+E+I+R != N")
        if (self.latent.sum(axis=1) != self.E).any():
            bad.append("sum(M_E) != E")
        if (self.infectious.sum(axis=1) != self.I).any():
            bad.append("sum(M_I) != I")
        if min(self.S.min(), self.E.min(), self.I.min(), self.R.min(), self.latent.min(), self.infectious.min()) < 0:
            bad.append("negative count")
        if (self.V > self.R).any():
            bad.append("V > R")
        if self.cumulative_infections < int(self.E.sum() + self.I.sum()):
            bad.append("cumulative infections below current E+I")
        if bad:
            raise SimulationFault(f"day {self.day}: " + "; ".join(bad))


@dataclass
class SimulationResult:
    records: list[DayRecord]
    cumulative_infections: int
    doses_used: int
    seed_blocks: tuple[str, ...]
    seed: Optional[int] = None
    final_state: Optional[SimulationState] = field(default=None, repr=False)

    @property
    def peak_pct(self) -> float:
        return max(r.pct_infected for r in self.records)

    @property
    def peak_day(self) -> int:
        best = max(self.records, key=lambda r: (r.infected, -r.day))
        return best.day

    @property
    def days_simulated(self) -> int:
        return self.records[-1].day

    def summary(self) -> dict:
        return {
            "peak_pct": self.peak_pct,
            "peak_day": self.peak_day,
            "cumulative_infections": self.cumulative_infections,
            "doses_used": self.doses_used,
            "days_simulated": self.days_simulated,
            "seed": self.seed,
        }


def round_half_up(x) -> int:
    return int(Decimal(str(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


# --------------------------------------------------------------------------
# seeding and vaccination


def select_seed_blocks(graph: CountyGraph, p: float, rng: np.random.Generator) -> tuple[str, ...]:
    """Uniformly choose max(1, round(p*|V|)) distinct blocks; returned in id order."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    n = len(graph)
    count = min(n, max(1, round_half_up(p * n)))
    picks = np.sort(rng.choice(n, size=count, replace=False))
    return tuple(graph.ids[k] for k in picks)


def seed_infection(state: SimulationState, graph: CountyGraph, blocks: Iterable[str], fraction: float) -> int:
    """Move round(fraction*N) people (at least one) of each block into the top latent bucket."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("seed fraction must lie in [0, 1]")
    if state.day != 0:
        raise SimulationFault("seeding is only allowed on day 0")
    seeded = 0
    for bid in blocks:
        k = graph.index(bid)
        n_k = int(state.N[k])
        want = round_half_up(fraction * n_k)
        if fraction > 0 and n_k > 0:
            want = max(want, 1)
        moved = min(want, int(state.S[k]))
        state.S[k] -= moved
        state.E[k] += moved
        state.latent[k, -1] += moved
        seeded += moved
    state.cumulative_infections += seeded
    return seeded


def compute_doses(graph: CountyGraph, fraction: float) -> int:
    """round(fraction * total population), half away from zero."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("vaccine fraction must lie in [0, 1]")
    return int((Decimal(str(fraction)) * graph.total_population).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def vaccinate(state: SimulationState, graph: CountyGraph, ranking: Sequence[str], doses: int) -> int:
    """Vaccinate susceptibles block by block in ranking order; returns doses used.

    Vaccinated people move S -> R and are tallied in V. The last block
    reached may be only partly covered.
    """
    if doses < 0:
        raise ValueError("doses must be non-negative")
    remaining = int(doses)
    for bid in ranking:
        if remaining == 0:
            break
        k = graph.index(bid)
        v = min(int(state.S[k]), remaining)
        state.S[k] -= v
        state.R[k] += v
        state.V[k] += v
        remaining -= v
    return int(doses) - remaining


# --------------------------------------------------------------------------
# day loop


@njit(cache=True)
def _contacts_kernel(S, E, I, latent, order, cum, contact_rate, transmissibility, mobility, rng):
    n = S.shape[0]
    top = latent.shape[1] - 1
    new = 0
    for src in range(n):
        contacts = I[src] * contact_rate
        for _ in range(contacts):
            r = rng.random()
            if r >= mobility:
                if rng.random() < transmissibility:
                    t = src
                else:
                    continue
            else:
                if rng.random() < transmissibility:
                    t = order[src, np.searchsorted(cum[src], rng.random())]
                else:
                    continue
            if S[t] > 0:
                S[t] -= 1
                E[t] += 1
                latent[t, top] += 1
                new += 1
    return new


def reference_contacts(state: SimulationState, graph: CountyGraph, params: DiseaseParams) -> int:
    """Plain-Python contact step; same draw order as the compiled kernel."""
    rng = state.rng
    new = 0
    for src in range(len(graph)):
        for _ in range(int(state.I[src]) * params.contact_rate):
            if rng.random() >= params.mobility:
                if not rng.random() < params.transmissibility:
                    continue
                t = src
            else:
                if not rng.random() < params.transmissibility:
                    continue
                target = rng.random()
                cum = graph.cumulative[src]
                k = next(i for i, c in enumerate(cum) if c >= target)
                t = int(graph.order[src, k])
            if state.S[t] > 0:
                state.S[t] -= 1
                state.E[t] += 1
                state.latent[t, -1] += 1
                new += 1
    return new


def shift_buckets(state: SimulationState) -> None:
    for m in (state.latent, state.infectious):
        m[:, :-1] = m[:, 1:]
        m[:, -1] = 0


def transition(state: SimulationState) -> None:
    onset = state.latent[:, 0].copy()
    state.E -= onset
    state.I += onset
    state.infectious[:, -1] += onset
    state.latent[:, 0] = 0
    recover = state.infectious[:, 0].copy()
    state.I -= recover
    state.R += recover
    state.infectious[:, 0] = 0


def advance_day(state: SimulationState, graph: CountyGraph, params: DiseaseParams, *, compiled: bool = True) -> DayRecord:
    """Run one simulated day (shift, contacts, transitions) and report it."""
    shift_buckets(state)
    if compiled:
        new = _contacts_kernel(
            state.S, state.E, state.I, state.latent, graph.order, graph.cumulative,
            int(params.contact_rate), float(params.transmissibility), float(params.mobility), state.rng,
        )
    else:
        new = reference_contacts(state, graph, params)
    state.cumulative_infections += int(new)
    transition(state)
    state.day += 1
    state.check()
    return state.record()


def run_simulation(
    graph: CountyGraph,
    params: DiseaseParams,
    scenario: ScenarioConfig,
    ranking: Sequence[str],
    doses: int,
    rng: np.random.Generator,
    seed_blocks: Optional[Sequence[str]] = None,
    *,
    compiled: bool = True,
    seed: Optional[int] = None,
) -> SimulationResult:
    """Run one epidemic until no latent or infectious people remain.

    ``seed_blocks`` defaults to a fresh draw from ``rng``. Prevention
    vaccinates before seeding; intervention vaccinates at the start of
    ``scenario.vaccination_day`` if the epidemic is still alive then.
    """
    state = SimulationState.initial(graph, params, rng)
    if seed_blocks is None:
        seed_blocks = select_seed_blocks(graph, params.seed_block_fraction, rng)
    doses_used = 0
    if scenario.kind == "prevention":
        doses_used = vaccinate(state, graph, ranking, doses)
    seed_infection(state, graph, seed_blocks, scenario.seed_fraction)
    state.check()
    records = [state.record()]
    cap = 10 * int(state.N.sum())
    while state.E.sum() + state.I.sum() > 0:
        if state.day >= cap:
            raise SimulationFault(f"simulation exceeded the {cap}-day cap")
        if scenario.kind == "intervention" and state.day + 1 == scenario.vaccination_day:
            doses_used = vaccinate(state, graph, ranking, doses)
        records.append(advance_day(state, graph, params, compiled=compiled))
    return SimulationResult(records, state.cumulative_infections, doses_used, tuple(seed_blocks), seed, state)


# --------------------------------------------------------------------------
# per-run output

TIMESERIES_FIELDS = ("day", "S", "E", "I", "R", "V", "infected", "pct_S", "pct_E", "pct_I", "pct_R", "pct_infected")


def write_timeseries(result: SimulationResult, dest, header: Optional[str] = None) -> None:
    with open_output(dest) as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TIMESERIES_FIELDS)
        for r in result.records:
            counts = (r.S, r.E, r.I, r.R, r.infected)
            writer.writerow(
                [r.day, r.S, r.E, r.I, r.R, r.V, r.infected] + [f"{r.pct(c):.6f}" for c in counts]
            )


def summary_json(result: SimulationResult) -> str:
    return json.dumps(result.summary(), indent=2, sort_keys=True) + "\n"
