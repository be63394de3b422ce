import io

import numpy as np
import pytest

from blockepi.centrality import CentralityScores, compute
from blockepi.config import ConfigError, config_hash, parse_config, provenance_header
from blockepi.county_data import synth_county
from blockepi.experiment import (
    NO_VACCINATION,
    AggregateStats,
    CellStats,
    ExperimentGrid,
    cell_rng,
    default_top_k,
    export_summary,
    export_timeseries,
    export_top_central,
    run_grid,
    run_set,
    top_central,
)
from blockepi.graph import build_weighted_graph

SMALL_FRACTIONS = (0.0, 0.5, 0.9)


@pytest.fixture(scope="module")
def graph():
    return build_weighted_graph(synth_county(40, 5000, seed=3))


@pytest.fixture(scope="module")
def grid():
    return ExperimentGrid(n_sets=3, vaccine_fractions=SMALL_FRACTIONS, base_seed=11)


def cell(measure, fraction, peaks, totals=None, ddof=0):
    peaks = np.asarray(peaks, dtype=float)
    totals = np.zeros_like(peaks) if totals is None else np.asarray(totals, dtype=float)
    return CellStats(measure, fraction, peaks, totals, np.zeros((1, 5)), ddof)


def test_cells_layout():
    g = ExperimentGrid()
    cells = g.cells()
    assert cells[0] == (NO_VACCINATION, 0.0)
    assert len(cells) == 6 * 4 + 1
    assert cells[1:5] == [("out_degree", f) for f in (0.3, 0.5, 0.75, 0.9)]


def test_grid_validation():
    with pytest.raises(ValueError):
        ExperimentGrid(vaccine_fractions=(0.5,))
    with pytest.raises(ValueError):
        ExperimentGrid(measures=("pagerank",))
    with pytest.raises(ValueError):
        ExperimentGrid(n_sets=0)


def test_cell_streams_are_independent_of_grid_shape():
    a = cell_rng(1, 0, "eigenvector", 0.5).random(4)
    b = cell_rng(1, 0, "eigenvector", 0.5).random(4)
    c = cell_rng(1, 0, "eigenvector", 0.75).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_run_set_deterministic_and_shares_seed_blocks(graph, grid):
    a = run_set(graph, grid, 0)
    b = run_set(graph, grid, 0)
    assert set(a) == set(grid.cells())
    for key in a:
        assert a[key].records == b[key].records
    assert len({r.seed_blocks for r in a.values()}) == 1
    other = run_set(graph, grid, 1)
    assert other[(NO_VACCINATION, 0.0)].seed_blocks != a[(NO_VACCINATION, 0.0)].seed_blocks


def test_run_set_index_checked(graph, grid):
    with pytest.raises(ValueError):
        run_set(graph, grid, grid.n_sets)


def test_adding_a_measure_keeps_existing_cells(graph):
    small = ExperimentGrid(n_sets=1, vaccine_fractions=SMALL_FRACTIONS, measures=("out_degree",), base_seed=2)
    big = ExperimentGrid(n_sets=1, vaccine_fractions=SMALL_FRACTIONS, measures=("out_degree", "eigenvector"), base_seed=2)
    a, b = run_set(graph, small, 0), run_set(graph, big, 0)
    for key in a:
        assert a[key].records == b[key].records


def test_run_grid_jobs_do_not_change_results(graph, grid):
    a = run_grid(graph, grid, jobs=1)
    b = run_grid(graph, grid, jobs=3)
    buf_a, buf_b = io.StringIO(), io.StringIO()
    export_summary(a, buf_a)
    export_summary(b, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()
    export_timeseries(a, buf_a)
    export_timeseries(b, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()


def test_aggregate_means_and_padding(graph, grid):
    stats = run_grid(graph, grid)
    c = stats[(NO_VACCINATION, 0.0)]
    assert c.peaks.shape == (3,)
    # every curve ends with no one latent or infectious
    assert c.curves[-1, 1] == 0.0 and c.curves[-1, 2] == 0.0
    assert c.curves[0].sum() - c.curves[0, 4] == pytest.approx(100.0)


def test_cell_stats_arithmetic():
    assert cell("x", 0.0, [10, 20, 30]).mean_peak_pct == 20.0
    assert cell("x", 0.0, [7, 7, 7]).stddev_peak_pct == 0.0
    single = cell("x", 0.0, [4.5])
    assert (single.mean_peak_pct, single.stddev_peak_pct) == (4.5, 0.0)
    assert cell("x", 0.0, [1, 3]).stddev_peak_pct == 1.0
    assert cell("x", 0.0, [1, 3], ddof=1).stddev_peak_pct == pytest.approx(2 ** 0.5)


def test_summary_rounds_to_four_decimals():
    stats = AggregateStats({("eigenvector", 0.3): cell("eigenvector", 0.3, [9.64728], [12.5])})
    buf = io.StringIO()
    export_summary(stats, buf)
    assert buf.getvalue().splitlines()[1] == "eigenvector,0.3,9.6473,0.0000,12.5000"


def test_empty_stats_header_only(tmp_path):
    p = tmp_path / "s.csv"
    export_summary(AggregateStats(), p, header="# prov")
    assert p.read_text() == "# prov\nmeasure,fraction,mean_peak_pct,stddev_peak_pct,mean_total_infected\n"


def test_full_grid_summary_has_25_rows(graph):
    grid = ExperimentGrid(n_sets=1, base_seed=0)
    stats = run_grid(graph, grid)
    buf = io.StringIO()
    export_summary(stats, buf)
    assert len(buf.getvalue().splitlines()) == 1 + 25


def test_timeseries_day_zero_latent_matches_seeding(graph):
    grid = ExperimentGrid(n_sets=1, vaccine_fractions=(0.0,), measures=("out_degree",),
                          scenario=ExperimentGrid().scenario.intervention())
    res = run_set(graph, grid, 0)[(NO_VACCINATION, 0.0)]
    seeded = sum(round(0.5 * graph.populations[graph.index(b)] + 1e-9) for b in res.seed_blocks)
    stats = run_grid(graph, grid)
    assert stats[(NO_VACCINATION, 0.0)].curves[0, 1] == pytest.approx(100.0 * seeded / graph.total_population)


# -- top central ------------------------------------------------------------


def test_top_central_labels(graph):
    scores = [compute(graph, m) for m in ("out_degree", "in_degree", "inverse_betweenness")]
    k = 5
    rows = top_central(scores, k)
    for s in scores:
        assert sum(s.measure in ms for ms in rows.values()) == k
    assert all(ms == sorted(ms) for ms in rows.values())


def test_top_central_k_edge_cases(tmp_path, graph):
    scores = [compute(graph, "out_degree"), compute(graph, "in_degree")]
    p = tmp_path / "t.csv"
    export_top_central(graph, scores, 0, p)
    assert p.read_text() == "block_id,measures\n"
    everything = top_central(scores, len(graph) + 3)
    assert set(everything) == set(graph.ids)
    assert all(v == ["in_degree", "out_degree"] for v in everything.values())


def test_default_top_k(graph):
    assert default_top_k(graph) == -(-len(graph) // 10)


def test_top_central_rejects_foreign_scores(tmp_path, graph):
    bad = CentralityScores("out_degree", {"zz": 1.0})
    with pytest.raises(ValueError):
        export_top_central(graph, [bad], 1, tmp_path / "x.csv")


# -- config -------------------------------------------------------------------


def test_config_defaults_and_hash(tmp_path):
    cfg = parse_config({"blocks": "c.csv", "scenario": {"kind": "intervention"}}, tmp_path)
    assert cfg.grid.scenario.seed_fraction == 0.5
    assert cfg.grid.n_sets == 20
    h1 = config_hash(cfg.resolved())
    h2 = config_hash(parse_config({"blocks": "c.csv", "scenario": {"kind": "intervention"}}, tmp_path).resolved())
    h3 = config_hash(parse_config({"blocks": "c.csv", "scenario": {"kind": "intervention"},
                                   "graph_params": {"epsilon": 1e-4}}, tmp_path).resolved())
    assert h1 == h2 != h3


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({"blocks": "c.csv", "colour": 1}, tmp_path)
    with pytest.raises(ConfigError):
        parse_config({"blocks": "c.csv", "grid": {"sets": 2}}, tmp_path)
    with pytest.raises(ConfigError):
        parse_config({"blocks": "c.csv", "params": {"mobility": 2.0}}, tmp_path)


def test_provenance_header_format():
    h = provenance_header({"a": 1}, 7)
    assert h.startswith("# blockepi 0.1.0 base_seed=7 config_sha256=")
    assert len(h.rsplit("=", 1)[1]) == 16
