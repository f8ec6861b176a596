import re

import numpy as np
import pytest

from ltlstitch import world
from ltlstitch.buchi import build
from ltlstitch.ltl import parse
from ltlstitch.taskgen import (ARITY, TEMPLATES, TIERS, GenerationExhausted, RegionConfig, TaskSpec, gen_task,
                               gen_tasks, instantiate, load_tasks, place_regions, sample_starts, save_tasks)
from ltlstitch.world import label, regions_disjoint


@pytest.mark.parametrize("template,atoms,text", [
    ("reach", ["r1"], "F r1"),
    ("safety", ["r1"], "G !r1"),
    ("sequence", ["r1", "r2"], "F (r1 & F r2)"),
    ("sequence", ["r1", "r2", "r3"], "F (r1 & F (r2 & F r3))"),
    ("coverage", ["r1", "r2", "r3"], "F r1 & F r2 & F r3"),
    ("conditional", ["r1", "r2"], "!r1 U r2"),
    ("patrol", ["r1", "r2"], "G F (r1 & F r2)"),
    ("choice", ["r1", "r2", "r3"], "F (r1 | r2 | r3)"),
])
def test_template_text(template, atoms, text):
    assert instantiate(template, atoms) == text
    parse(text)


@pytest.mark.parametrize("template,atoms", [("reach", ["a", "b"]), ("conditional", ["a"]),
                                            ("coverage", []), ("dance", ["a"])])
def test_template_arity_errors(template, atoms):
    with pytest.raises(ValueError):
        instantiate(template, atoms)


@pytest.fixture(scope="module")
def maze():
    return world.make_maze("medium", seed=0)


def n_templates(t):
    return len(t.templates)


@pytest.mark.parametrize("difficulty", list(TIERS))
def test_tier_shapes(maze, difficulty):
    counts, budget = TIERS[difficulty]
    for t in gen_tasks(maze, difficulty, 40, seed=11):
        assert set(t.templates) <= set(TEMPLATES)
        assert 1 <= n_templates(t) <= max(counts)
        assert len(t.regions) <= budget
        assert t.labels == sorted({a for a in re.findall(r"r\d+", t.formula)})
        build(t.formula, t.labels)     # satisfiable under one label per step


def test_simple_tier_single_template(maze):
    assert all(n_templates(t) == 1 for t in gen_tasks(maze, "simple", 50, seed=3))


def test_regions_disjoint_and_free(maze):
    # placement is the only source of region geometry, so fuzz it directly
    labels = [f"r{i}" for i in range(1, TIERS["hard"][1] + 1)]
    for seed in range(1000):
        regs = place_regions(maze, labels, np.random.default_rng(seed))
        assert regions_disjoint(regs)
        assert all(r.in_free_space(maze) for r in regs)
    for t in gen_tasks(maze, "hard", 50, seed=0):
        assert regions_disjoint(t.regions)


def test_region_margin_respected(maze):
    rng = np.random.default_rng(0)
    cfg = RegionConfig(margin=0.5)
    regs = place_regions(maze, [f"r{i}" for i in range(8)], rng, cfg)
    assert all(not a.intersects(b, 0.5) for i, a in enumerate(regs) for b in regs[i + 1:])


def test_placement_exhaustion():
    tiny = world.make_maze(4, seed=0)
    with pytest.raises(GenerationExhausted):
        place_regions(tiny, [f"r{i}" for i in range(12)], np.random.default_rng(0), RegionConfig(max_tries=50))


def test_generation_is_deterministic(maze, tmp_path):
    a = gen_tasks(maze, "medium", 20, seed=7)
    b = gen_tasks(maze, "medium", 20, seed=7)
    assert [x.to_json() for x in a] == [x.to_json() for x in b]
    save_tasks(a, tmp_path / "t.jsonl")
    assert [x.to_json() for x in load_tasks(tmp_path / "t.jsonl")] == [x.to_json() for x in a]
    assert TaskSpec.from_json(a[0].to_json()) == a[0]


def test_unknown_difficulty(maze):
    with pytest.raises(ValueError):
        gen_task(maze, "impossible")


def test_starts_clear_of_regions(maze):
    t = gen_task(maze, "hard", seed=5)
    starts = sample_starts(maze, t.regions, 30, seed=1)
    assert starts.shape == (30, 2)
    for p in starts:
        assert maze.is_free(p) and not label(t.regions, p)
        assert all(r.distance_to(p) >= 0.5 for r in t.regions)
    assert np.array_equal(starts, sample_starts(maze, t.regions, 30, seed=1))


def test_arity_table_covers_templates():
    assert set(ARITY) == set(TEMPLATES)
    for tpl, (lo, hi) in ARITY.items():
        for k in range(lo, hi + 1):
            instantiate(tpl, [f"r{i}" for i in range(1, k + 1)])
