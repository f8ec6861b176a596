"""Random LTL task benchmark: templates, conjunctive composition, region
placement and automaton-level validity checking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .buchi import EmptyAutomaton, build
from .world import Maze, Region, label, regions_disjoint

TEMPLATES = ("reach", "safety", "sequence", "coverage", "conditional", "patrol", "choice")

# number of atoms each template takes: fixed, or drawn from [lo, hi]
ARITY = {
    "reach": (1, 1),
    "safety": (1, 1),
    "sequence": (2, 3),
    "coverage": (2, 3),
    "conditional": (2, 2),
    "patrol": (2, 3),
    "choice": (2, 3),
}

TIERS = {
    # difficulty: (template counts, region budget)
    "simple": ((1,), 5),
    "medium": ((2, 3), 5),
    "hard": ((3, 4), 8),
}


class GenerationExhausted(Exception):
    pass


def _nested(atoms: Sequence[str]) -> str:
    if len(atoms) == 1:
        return atoms[0]
    return f"({atoms[0]} & F {_nested(atoms[1:])})"


def instantiate(template: str, atoms: Sequence[str]) -> str:
    """Formula text of ``template`` over ``atoms``."""
    if template not in ARITY:
        raise ValueError(f"unknown template {template!r}")
    fixed = {"reach": 1, "safety": 1, "conditional": 2}.get(template)
    if (fixed is not None and len(atoms) != fixed) or not atoms:
        raise ValueError(f"{template} cannot take {len(atoms)} atoms")
    if template == "reach":
        return f"F {atoms[0]}"
    if template == "safety":
        return f"G !{atoms[0]}"
    if template == "sequence":
        return "F " + _nested(atoms)
    if template == "coverage":
        return " & ".join(f"F {a}" for a in atoms)
    if template == "conditional":
        return f"!{atoms[0]} U {atoms[1]}"
    if template == "patrol":
        return "G F " + _nested(atoms)
    return "F (" + " | ".join(atoms) + ")"


@dataclass
class TaskSpec:
    formula: str
    regions: list[Region]
    difficulty: str
    seed: int
    templates: list[str] = field(default_factory=list)

    @property
    def labels(self) -> list[str]:
        return sorted(r.label for r in self.regions)

    def to_json(self) -> dict:
        return {
            "formula": self.formula,
            "regions": [r.to_json() for r in self.regions],
            "difficulty": self.difficulty,
            "seed": self.seed,
            "templates": list(self.templates),
        }

    @classmethod
    def from_json(cls, d: dict) -> "TaskSpec":
        return cls(d["formula"], [Region.from_json(r) for r in d["regions"]], d["difficulty"],
                   int(d["seed"]), list(d.get("templates", [])))


@dataclass
class RegionConfig:
    size_lo: float = 0.25     # circle radius / rectangle half-extent range
    size_hi: float = 0.45
    margin: float = 0.5       # clearance between regions
    rect_prob: float = 0.5
    max_tries: int = 1000


def _compose(rng: np.random.Generator, difficulty: str) -> tuple[list[str], list[str], list[str]]:
    counts, budget = TIERS[difficulty]
    n_tpl = int(rng.choice(counts))
    parts, names, atoms = [], [], []
    for _ in range(n_tpl):
        tpl = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        lo, hi = ARITY[tpl]
        k = int(rng.integers(lo, hi + 1))
        chosen: list[str] = []
        for _ in range(k):
            pool = [a for a in atoms if a not in chosen]
            fresh = len(atoms) < budget and (not pool or rng.random() >= 0.25)
            if fresh:
                a = f"r{len(atoms) + 1}"
                atoms.append(a)
            elif pool:
                a = pool[int(rng.integers(len(pool)))]
            else:
                break
            chosen.append(a)
        if len(chosen) < lo:
            continue
        parts.append(instantiate(tpl, chosen))
        names.append(tpl)
    if n_tpl > 1:
        parts = [f"({p})" for p in parts]
    return parts, names, sorted(atoms, key=lambda a: int(a[1:]))


def place_regions(m: Maze, labels: Sequence[str], rng: np.random.Generator,
                  cfg: RegionConfig | None = None) -> list[Region]:
    """Disjoint regions in free space, one per label, by rejection sampling."""
    cfg = cfg or RegionConfig()
    cells = m.free_cells()
    out: list[Region] = []
    for lab in labels:
        for _ in range(cfg.max_tries):
            r, c = cells[int(rng.integers(len(cells)))]
            cx = (c + rng.random()) * m.cell_size
            cy = (r + rng.random()) * m.cell_size
            if rng.random() < cfg.rect_prob:
                hx, hy = rng.uniform(cfg.size_lo, cfg.size_hi, size=2)
                reg = Region(lab, "rect", (cx - hx, cy - hy, cx + hx, cy + hy))
            else:
                reg = Region(lab, "circle", (cx, cy, rng.uniform(cfg.size_lo, cfg.size_hi)))
            if reg.in_free_space(m) and not any(reg.intersects(o, cfg.margin) for o in out):
                out.append(reg)
                break
        else:
            raise GenerationExhausted(f"could not place region {lab!r}")
    return out


def gen_task(m: Maze, difficulty: str = "simple", seed: int = 0, max_retries: int = 100,
             region_cfg: RegionConfig | None = None) -> TaskSpec:
    if difficulty not in TIERS:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        parts, names, atoms = _compose(rng, difficulty)
        if not parts:
            continue
        formula = " & ".join(parts)
        try:
            build(formula, atoms)
        except EmptyAutomaton:
            continue
        try:
            regions = place_regions(m, atoms, rng, region_cfg)
        except GenerationExhausted:
            continue
        assert regions_disjoint(regions)
        return TaskSpec(formula, regions, difficulty, seed, names)
    raise GenerationExhausted(f"no valid {difficulty} task after {max_retries} attempts")


def gen_tasks(m: Maze, difficulty: str, n: int, seed: int = 0) -> list[TaskSpec]:
    """``n`` tasks with seeds ``seed, seed+1, ...``."""
    return [gen_task(m, difficulty, seed + i) for i in range(n)]


def sample_starts(m: Maze, regions: Sequence[Region], n: int, seed: int = 0,
                  clearance: float = 0.5) -> np.ndarray:
    """Free start states at least ``clearance`` away from every region."""
    rng = np.random.default_rng(seed)
    cells = m.free_cells()
    out = []
    for _ in range(1000 * n):
        r, c = cells[int(rng.integers(len(cells)))]
        p = np.array([(c + rng.random()) * m.cell_size, (r + rng.random()) * m.cell_size])
        if m.is_free(p) and not label(regions, p) and all(g.distance_to(p) >= clearance for g in regions):
            out.append(p)
            if len(out) == n:
                return np.array(out)
    raise GenerationExhausted("could not sample start states clear of the regions")


def save_tasks(tasks: Sequence[TaskSpec], path) -> None:
    with open(path, "w") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_json()) + "\n")


def load_tasks(path) -> list[TaskSpec]:
    with open(path) as fh:
        return [TaskSpec.from_json(json.loads(x)) for x in fh if x.strip()]
