import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockepi.county_data import Block, CountyDataset, DatasetError, Point, Polygon, centroid, synth_county
from blockepi.graph import (
    CountyGraph,
    GraphError,
    GraphParams,
    build_radius_graph,
    build_touches_graph,
    build_weighted_graph,
    export_graph,
    gravity_weights,
    load_graph_csv,
    sample_contact_block,
    sample_contact_indices,
    scaled_radius,
)


def point_block(bid, pop, x, y):
    return Block(bid, pop, Point(x, y))


def square_block(bid, pop, x0, y0, side=1.0):
    poly = Polygon.from_coords([(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])
    return Block(bid, pop, centroid(poly), poly)


def dataset(*blocks):
    return CountyDataset("t", tuple(blocks))


def abcd_graph():
    # row "a" normalizes to [0.5, 0.3, 0.2] over b, c, d
    w = np.array([
        [0.0, 5.0, 3.0, 2.0],
        [1.0, 0.0, 1.0, 1.0],
        [1.0, 2.0, 0.0, 1.0],
        [1.0, 1.0, 1.0, 0.0],
    ])
    return CountyGraph.from_weights("abcd", [1, 1, 1, 1], w)


# -- weights ----------------------------------------------------------------


def test_weight_formula_example():
    g = build_weighted_graph(dataset(point_block("u", 10, 0.0, 0.0), point_block("v", 20, 0.0002, 0.0)))
    # hand evaluation: 10*20 / (10000*0.0002 + 0.00001)
    assert g.weights[0, 1] == pytest.approx(200 / 2.00001, rel=1e-12)
    assert g.weights[0, 1] == pytest.approx(99.9995, abs=1e-4)


def test_centroid_inside_target_uses_epsilon():
    big = square_block("v", 20, 0.0, 0.0, side=4.0)
    inner = point_block("u", 10, 1.0, 1.0)
    g = build_weighted_graph(dataset(inner, big))
    assert g.weights[g.index("u"), g.index("v")] == pytest.approx(2.0e7)


def test_unpopulated_blocks_dropped():
    g = build_weighted_graph(dataset(point_block("a", 5, 0, 0), point_block("b", 0, 1, 0), point_block("c", 3, 2, 0)))
    assert g.ids == ("a", "c")


def test_needs_two_populated_blocks():
    with pytest.raises(GraphError):
        build_weighted_graph(dataset(point_block("a", 5, 0, 0), point_block("b", 0, 1, 0)))


def test_graph_is_complete_and_sorted():
    g = build_weighted_graph(synth_county(25, 3000, seed=2))
    n = len(g)
    assert list(g.ids) == sorted(g.ids)
    assert g.edges.sum() == n * (n - 1)
    assert (np.diag(g.weights) == 0).all()


def test_symmetric_inputs_give_symmetric_weights():
    g = build_weighted_graph(dataset(square_block("a", 7, 0, 0), square_block("b", 7, 3, 0)))
    assert g.weights[0, 1] == g.weights[1, 0]


@given(st.integers(1, 10_000), st.integers(1, 10_000), st.floats(1e-6, 10.0))
def test_weight_monotone_in_population_and_distance(p, q, d):
    def w(p, q, d):
        ids, _, _, weights = gravity_weights(dataset(point_block("a", p, 0, 0), point_block("b", q, d, 0)))
        return weights[0, 1]

    base = w(p, q, d)
    assert w(p + 1, q, d) > base
    assert w(p, q + 1, d) > base
    assert w(p, q, d * 1.5) < base


# -- contact sampling -------------------------------------------------------


def test_sampling_table_order_and_last_entry():
    g = abcd_graph()
    assert [g.ids[k] for k in g.order[0]] == ["b", "c", "d"]
    assert g.cumulative[0] == pytest.approx([0.5, 0.8, 1.0])
    assert g.cumulative[0][-1] == 1.0


@pytest.mark.parametrize("target, expected", [(0.6, "c"), (0.0, "b"), (0.9999, "d"), (0.5, "b"), (0.8, "c")])
def test_sample_contact_block_examples(target, expected):
    assert sample_contact_block(abcd_graph(), "a", target) == expected


def test_sample_ties_break_by_id():
    w = np.ones((3, 3)) - np.eye(3)
    g = CountyGraph.from_weights(["z", "y", "x"], [1, 1, 1], w)
    assert [g.ids[k] for k in g.order[g.index("z")]] == ["x", "y"]


def test_sample_unknown_origin():
    with pytest.raises(GraphError):
        sample_contact_block(abcd_graph(), "q", 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampling_never_returns_origin(seed):
    g = build_weighted_graph(synth_county(12, 800, seed=seed % 1000))
    rng = np.random.default_rng(seed)
    for u, origin in enumerate(g.ids):
        picks = sample_contact_indices(g, origin, rng.random(200))
        assert (picks != u).all()


def test_sampling_frequencies_within_three_standard_errors():
    g = abcd_graph()
    n = 200_000
    picks = sample_contact_indices(g, "a", np.random.default_rng(11).random(n))
    for bid, p in zip("bcd", (0.5, 0.3, 0.2)):
        freq = np.mean(picks == g.index(bid))
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_county_graph_rejects_zero_weight():
    w = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(GraphError):
        CountyGraph.from_weights("ab", [1, 1], w)


# -- rejected representations ----------------------------------------------


def test_touches_shared_edge_and_disjoint():
    g = build_touches_graph(dataset(square_block("a", 1, 0, 0), square_block("b", 1, 1, 0), square_block("c", 1, 5, 5)))
    assert not g.directed
    e = {(g.ids[u], g.ids[v]) for u, v in zip(*np.nonzero(g.edges))}
    assert e == {("a", "b"), ("b", "a")}


def _interiors_intersect(a, b, steps=200):
    # brute force: sample a fine grid and look for a point strictly inside both squares
    def bounds(blk):
        xs = [p.x for p in blk.polygon.exterior]
        ys = [p.y for p in blk.polygon.exterior]
        return min(xs), max(xs), min(ys), max(ys)

    (ax0, ax1, ay0, ay1), (bx0, bx1, by0, by1) = bounds(a), bounds(b)
    lo_x, hi_x, lo_y, hi_y = min(ax0, bx0), max(ax1, bx1), min(ay0, by0), max(ay1, by1)
    xs, ys = np.meshgrid(np.linspace(lo_x, hi_x, steps), np.linspace(lo_y, hi_y, steps))
    in_a = (xs > ax0) & (xs < ax1) & (ys > ay0) & (ys < ay1)
    in_b = (xs > bx0) & (xs < bx1) & (ys > by0) & (ys < by1)
    return bool((in_a & in_b).any())


def test_touches_overlapping_squares_have_no_edge():
    a, b = square_block("a", 1, 0, 0), square_block("b", 1, 0.5, 0.5)
    assert _interiors_intersect(a, b)
    g = build_touches_graph(dataset(a, b))
    assert not g.edges.any()


def test_touches_requires_polygons():
    with pytest.raises(DatasetError):
        build_touches_graph(dataset(point_block("a", 1, 0, 0), square_block("b", 1, 1, 0)))


def test_radius_graph_unscaled_both_directions():
    g = build_radius_graph(dataset(point_block("a", 1, 0, 0), point_block("b", 1, 0.5, 0)), 1.0)
    assert g.edges[0, 1] and g.edges[1, 0]


def test_scaled_radius_factor():
    assert scaled_radius(1.0, 500) == pytest.approx(0.5)
    g = build_radius_graph(dataset(point_block("a", 500, 0, 0), point_block("b", 1, 0.49, 0), point_block("c", 1, 0, 0.51)), 1.0, True)
    assert g.edges[0, 1] and not g.edges[0, 2]


def test_scaled_radius_zero_at_1000_people():
    g = build_radius_graph(dataset(point_block("a", 1000, 0, 0), point_block("b", 1, 0.001, 0)), 1.0, True)
    assert not g.edges[0].any()
    assert g.edges[1, 0]


def test_rejected_representations_overrate_large_sparse_block():
    # five dense urban squares in a row, one large sparse block lying along their top edge
    urban = [square_block(f"u{i}", 100, float(i), 0.0) for i in range(5)]
    rural = Block("rural", 10, centroid(Polygon.from_coords([(0, 1), (5, 1), (5, 6), (0, 6)])),
                  Polygon.from_coords([(0, 1), (5, 1), (5, 6), (0, 6)]))
    ds = dataset(*urban, rural)

    touches = build_touches_graph(ds)
    deg = dict(zip(touches.ids, touches.degree_counts()))
    assert deg["rural"] > max(deg[f"u{i}"] for i in range(5))

    radius = build_radius_graph(ds, 0.6)
    in_deg = dict(zip(radius.ids, radius.edges.sum(axis=0)))
    assert in_deg["rural"] > max(in_deg[f"u{i}"] for i in range(5))

    weighted = build_weighted_graph(ds)
    out = dict(zip(weighted.ids, weighted.out_degree))
    assert out["rural"] < min(out[f"u{i}"] for i in range(5))


# -- export -----------------------------------------------------------------


def test_export_round_trip(tmp_path):
    g = build_weighted_graph(synth_county(8, 500, seed=4))
    p = tmp_path / "g.csv"
    with p.open("w", newline="") as fh:
        fh.write("# header\n")
        export_graph(g, fh)
    back = load_graph_csv(p)
    assert back.ids == g.ids
    assert np.array_equal(back.weights, g.weights)


def test_params_validated():
    with pytest.raises(GraphError):
        GraphParams(epsilon=0.0)
    with pytest.raises(GraphError):
        GraphParams(distance_scale=-1.0)
