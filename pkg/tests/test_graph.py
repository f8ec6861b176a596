import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltlstitch.graph import (LatentGraph, NoPath, build_edges, build_graph, cluster, shortest_path,
                             transition_support)
from ltlstitch.world import Trajectory

from oracles import brute_shortest


def fake_embedding(z):
    z = np.asarray(z, dtype=float)
    return SimpleNamespace(coords=z.reshape(len(z), -1), stray=np.zeros(0, dtype=int))


def traj(points):
    s = np.asarray(points, dtype=float)
    return Trajectory(s, np.diff(s, axis=0))


def test_cluster_single_point():
    coords, n2r = cluster(np.array([0]), fake_embedding([[1.0, 2.0]]), 8.0)
    assert coords.tolist() == [[1.0, 2.0]] and [a.tolist() for a in n2r] == [[0]]


def test_cluster_identical_points_merge():
    coords, n2r = cluster(np.arange(5), fake_embedding(np.ones((5, 2))), 8.0)
    assert len(coords) == 1 and n2r[0].tolist() == [0, 1, 2, 3, 4]


def test_cluster_separated_groups():
    z = [[0, 0], [0.5, 0], [20, 0], [20.5, 0]]
    coords, n2r = cluster(np.arange(4), fake_embedding(z), 8.0)
    assert sorted(a.tolist() for a in n2r) == [[0, 1], [2, 3]]
    assert np.allclose(sorted(coords[:, 0]), [0.25, 20.25])


def test_cluster_line_spacing():
    z = np.stack([np.linspace(0, 100, 401), np.zeros(401)], axis=1)
    coords, n2r = cluster(np.arange(401), fake_embedding(z), 8.0)
    gaps = np.diff(np.sort(coords[:, 0]))
    # greedy radius h_td/2: neighbouring nodes sit about a radius apart
    assert 3.0 <= gaps.min() and gaps.max() <= 8.0
    assert abs(gaps.mean() - 4.0) < 0.6


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=1, max_size=60),
       st.floats(1.0, 10.0))
def test_cluster_partitions_retained(pts, h):
    z = np.array(pts)
    retained = np.arange(0, len(z), 1)[::-1].copy()
    coords, n2r = cluster(retained, fake_embedding(z), h)
    flat = np.sort(np.concatenate(n2r))
    assert flat.tolist() == sorted(retained.tolist())
    assert all(len(a) for a in n2r)
    for k, members in enumerate(n2r):
        assert np.allclose(coords[k], z[members].mean(axis=0))
        # every member is closest to its own node's centroid, up to ties
        d = np.linalg.norm(coords[None] - z[members][:, None], axis=2)
        assert np.all(d[:, k] <= d.min(axis=1) + 1e-9)


def test_cluster_rejects_bad_input():
    with pytest.raises(ValueError):
        cluster(np.array([0]), fake_embedding([[0.0]]), 0.0)
    with pytest.raises(ValueError):
        cluster(np.array([], dtype=int), fake_embedding([[0.0]]), 1.0)


# ---------------------------------------------------------------- edges


@pytest.mark.parametrize("dx,expected", [(8.0, True), (8.0 + 1e-6, False), (3.0, True)])
def test_edge_threshold_is_closed(dx, expected):
    e = build_edges(np.array([[0.0, 0.0], [dx, 0.0]]), 8.0)
    assert ((0, 1) in e) is expected and ((1, 0) in e) is expected
    if expected:
        assert e[(0, 1)] == pytest.approx(dx)


def test_support_blocks_wall_shortcut():
    # two rooms whose centres are latent-close but never connected by data
    left = traj([[1.0, 1.0 + 0.25 * k] for k in range(4)])
    right = traj([[3.0, 1.0 + 0.25 * k] for k in range(4)])
    n2r = [np.arange(0, 4), np.arange(4, 8)]
    coords = np.array([[0.0, 0.0], [2.0, 0.0]])
    sup = transition_support([left, right], n2r, horizon=8)
    assert sup == set()
    assert build_edges(coords, 8.0, sup) == {}
    assert set(build_edges(coords, 8.0, None)) == {(0, 1), (1, 0)}


def test_support_directed_and_symmetric():
    walk = traj([[1.0 + 0.25 * k, 1.0] for k in range(6)])
    n2r = [np.arange(0, 3), np.arange(3, 6)]
    assert transition_support([walk], n2r, 2) == {(0, 1)}
    assert transition_support([walk], n2r, 2, symmetric=True) == {(0, 1), (1, 0)}
    # the horizon bounds how far apart the two observations may be
    n2r = [np.array([0]), np.arange(1, 5), np.array([5])]
    assert (0, 2) not in transition_support([walk], n2r, 4)
    assert (0, 2) in transition_support([walk], n2r, 5)


@pytest.fixture
def base_graph(small_embedding, small_graph):
    return small_embedding, small_graph


def test_graph_invariants(base_graph, small_dataset):
    e, g = base_graph
    n = sum(len(t.states) for t in small_dataset)
    members = np.sort(np.concatenate(g.node2raw))
    assert members.tolist() == sorted(set(range(n)) - set(e.stray.tolist()))
    for (u, v), w in g.edges.items():
        assert u != v
        assert g.edges[(v, u)] == w                         # symmetric support
        assert w == pytest.approx(np.linalg.norm(g.coords[u] - g.coords[v]))
        assert 0 < w <= g.h_td


def test_graph_json_round_trip(base_graph, small_dataset):
    _, g = base_graph
    from ltlstitch.embed import flatten
    back = LatentGraph.from_json(g.to_json(), flatten(small_dataset)[0])
    assert back.dumps() == g.dumps()
    assert back.edges == g.edges


def test_graph_json_rejects_version(base_graph):
    _, g = base_graph
    d = g.to_json()
    d["version"] = "other/9"
    with pytest.raises(ValueError):
        LatentGraph.from_json(d, g.raw)


def test_unknown_support_mode(small_dataset, base_graph):
    e, _ = base_graph
    with pytest.raises(ValueError):
        build_graph(small_dataset, e, support="sideways")


# ---------------------------------------------------------------- search


def tiny_graph(n, edges):
    return LatentGraph(np.zeros((n, 1)), [np.array([i]) for i in range(n)], dict(edges), 1.0,
                       np.zeros((n, 2)), n_dataset=n)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 7).flatmap(lambda n: st.tuples(
    st.just(n),
    st.dictionaries(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1]),
                    st.floats(0.1, 5.0), max_size=20),
    st.sets(st.integers(0, n - 1)))))
def test_shortest_path_matches_brute_force(case):
    n, edges, blocked = case
    g = tiny_graph(n, edges)
    adj = {}
    for (u, v), w in edges.items():
        adj.setdefault(u, []).append((v, w))
    for u in range(n):
        for v in range(n):
            want = brute_shortest(adj, u, v, lambda x: x not in blocked)
            try:
                path, cost = shortest_path(g, u, v, lambda x: x not in blocked)
            except NoPath:
                assert math.isinf(want)
                continue
            assert cost == pytest.approx(want)
            assert path[0] == u and path[-1] == v
            assert all(x not in blocked for x in path[1:-1])
            assert sum(edges[(a, b)] for a, b in zip(path, path[1:])) == pytest.approx(cost)


def test_shortest_path_trivial():
    g = tiny_graph(2, {})
    assert shortest_path(g, 1, 1) == ([1], 0.0)
    with pytest.raises(NoPath):
        shortest_path(g, 0, 1)
