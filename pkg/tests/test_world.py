import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltlstitch import world
from ltlstitch.world import Maze, Region, label, regions_disjoint, step

from oracles import grid_geodesic


def box(n=5):
    w = np.ones((n, n), dtype=bool)
    w[1:-1, 1:-1] = False
    return Maze(w, 1.0, 1.0)


def test_free_motion():
    m = box()
    assert np.allclose(step(m, [2.0, 2.0], [0.5, 0.0]), [2.5, 2.0])


def test_stop_at_wall():
    m = box()
    s = step(m, [3.8, 2.5], [0.5, 0.0])   # wall starts at x = 4
    assert s[0] == pytest.approx(4.0, abs=1e-6)
    assert s[0] < 4.0 and m.is_free(s)


def test_zero_action():
    m = box()
    assert np.array_equal(step(m, [2.2, 1.7], [0.0, 0.0]), [2.2, 1.7])


def test_no_tunnelling_through_corner():
    m = box()
    s = step(m, [3.9, 3.9], [0.5, 0.5])
    assert m.is_free(s)


@pytest.mark.parametrize("walls", [np.zeros((3, 3), bool), np.ones((4, 4), bool), np.ones((2, 5), bool)])
def test_invalid_mazes(walls):
    with pytest.raises(ValueError):
        Maze(walls)


@pytest.mark.parametrize("size,n", [("medium", 16), ("large", 25), ("giant", 40), (10, 10)])
def test_maze_presets_connected(size, n):
    m = world.make_maze(size, seed=7)
    assert m.shape == (n, n)
    cells = m.free_cells()
    dist = world.cell_distances(m, cells[0])
    assert all(dist[c] >= 0 for c in cells)


def test_maze_determinism():
    assert np.array_equal(world.make_maze("medium", 3).walls, world.make_maze("medium", 3).walls)


# ---------------------------------------------------------------- regions


def test_label_examples():
    c = Region("a", "circle", (2.0, 2.0, 0.5))
    r = Region("b", "rect", (1.0, 3.0, 2.0, 3.5))
    assert label([c, r], [2.0, 2.0]) == {"a"}
    assert label([c, r], [3.5, 3.5]) == frozenset()
    assert label([c, r], [2.5, 2.0]) == {"a"}          # on the boundary
    assert label([c, r], [2.0, 3.5]) == {"b"}          # rectangle corner


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 8), st.floats(1, 8), st.floats(0.1, 1.0), st.booleans()),
                min_size=1, max_size=6),
       st.tuples(st.floats(0, 10), st.floats(0, 10)))
def test_disjoint_regions_give_single_labels(specs, p):
    regions = []
    for i, (x, y, s, circ) in enumerate(specs):
        reg = Region(f"r{i}", "circle", (x, y, s)) if circ else Region(f"r{i}", "rect", (x - s, y - s, x + s, y + s))
        if all(not reg.intersects(o) for o in regions):
            regions.append(reg)
    assert regions_disjoint(regions)
    assert len(label(regions, p)) <= 1


@pytest.mark.parametrize("reg", [Region("a", "circle", (2, 2, 0.5)), Region("a", "rect", (1.2, 1.5, 2.5, 2.1))])
def test_region_json_round_trip(reg):
    assert Region.from_json(json.loads(json.dumps(reg.to_json()))) == reg


def test_region_sampling_stays_inside(rng):
    reg = Region("a", "circle", (2, 2, 0.5))
    assert all(reg.contains(reg.sample(rng)) for _ in range(200))


# ---------------------------------------------------------------- datasets


@pytest.fixture(scope="module")
def maze():
    return world.make_maze("medium", seed=1)


@pytest.mark.parametrize("regime", ["navigate", "stitch", "explore"])
def test_dataset_states_free_and_consistent(maze, regime):
    ds = world.gen_dataset(maze, regime, seed=2, n_rollouts=20)
    assert ds
    for t in ds:
        assert maze.free_mask(t.states).all()
        for s, a, s2 in zip(t.states[:-1], t.actions, t.states[1:]):
            assert np.linalg.norm(a) <= maze.v_max + 1e-12
            assert np.allclose(step(maze, s, a), s2)


def test_stitch_fragment_bounds(maze):
    ds = world.gen_dataset(maze, "stitch", seed=2, n_rollouts=30, frag_len=25)
    for t in ds:
        assert len(t) <= 25
        assert np.linalg.norm(t.states[-1] - t.states[0]) <= 25 * maze.v_max + 1e-9


def test_navigate_near_geodesic(maze):
    ds = world.gen_dataset(maze, "navigate", seed=4, n_rollouts=30)
    for t in ds:
        a, b = maze.cell_of(t.states[0]), maze.cell_of(t.states[-1])
        optimal = grid_geodesic(maze, a, b) * maze.cell_size / maze.v_max
        assert len(t) <= 1.5 * optimal + 2


def test_dataset_determinism(tmp_path, maze):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    world.save_dataset(world.gen_dataset(maze, "stitch", seed=9, n_rollouts=10), p1)
    world.save_dataset(world.gen_dataset(maze, "stitch", seed=9, n_rollouts=10), p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = world.load_dataset(p1)
    assert all(np.array_equal(x.states, y.states) for x, y in zip(back, world.gen_dataset(maze, "stitch", seed=9, n_rollouts=10)))


@pytest.mark.parametrize("kw", [dict(frag_len=1), dict(n_rollouts=0), dict(regime="teleport")])
def test_dataset_validation(maze, kw):
    args = dict(regime="stitch", seed=0, n_rollouts=2)
    args.update(kw)
    with pytest.raises(ValueError):
        world.gen_dataset(maze, **args)


def test_file_round_trips(tmp_path, maze):
    world.save_maze(maze, tmp_path / "m.txt")
    m2 = world.load_maze(tmp_path / "m.txt")
    assert np.array_equal(m2.walls, maze.walls) and m2.v_max == maze.v_max
    regs = [Region("a", "circle", (2.5, 2.5, 0.3)), Region("b", "rect", (4.2, 4.2, 4.6, 4.8))]
    world.save_regions(regs, tmp_path / "r.json")
    assert world.load_regions(tmp_path / "r.json") == regs
    head = (tmp_path / "m.txt").read_text().splitlines()[0]
    assert head.split() == ["1.0", "0.25"]
