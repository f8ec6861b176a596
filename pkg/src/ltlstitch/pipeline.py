"""Batch pipeline pieces shared by the command line and the test suite:
offline artifacts, episodes, evaluation CSV and SVG rendering."""

from __future__ import annotations

import csv
import io
import json
import math
import re
import time
from dataclasses import dataclass, fields
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .augment import augment
from .buchi import build
from .embed import Embedding, fit, harvest, te_prune
from .execute import ExecConfig, ExecTrace, Navigator, check_success, track
from .graph import LatentGraph, build_graph
from .plan import Infeasible, Plan, decoupled_synthesize, synthesize
from .taskgen import TaskSpec, sample_starts
from .world import Maze, Trajectory

ARTIFACT_VERSION = "ltlstitch.artifact/1"
VARIANTS = ("joint", "decoupled")


@dataclass
class Settings:
    """Every tunable of the pipeline; the config file uses these names."""

    seed: int = 0
    htd: float = 8.0
    d_latent: int = 8
    n_landmarks: int = 128
    tau_te: float = 0.0
    te_h: int = 4
    support: str = "symmetric"
    n_anchors: int = 5
    anchor_mode: str = "construct"
    weighted_soft: bool = False
    tau_soft: float = 0.5
    lam: float = 0.5
    topk: int = 8
    variant: str = "joint"
    episodes: int = 5
    max_steps: int = 20000
    suffix_laps: int = 1
    timing: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    def exec_config(self) -> ExecConfig:
        return ExecConfig(h_td=self.htd, max_steps=self.max_steps, suffix_laps=self.suffix_laps)


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def parse_config(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Values keep their text."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def make_settings(values: dict) -> Settings:
    """Settings from text or typed values, rejecting unknown keys."""
    if "lambda" in values:
        values = dict(values)
        values["lam"] = values.pop("lambda")
    types = {f.name: f.type for f in fields(Settings)}
    kw = {}
    for k, v in values.items():
        if k not in types:
            raise ValueError(f"unknown setting {k!r}")
        if v is None:
            continue
        t = types[k]
        if isinstance(v, str):
            if t == "bool":
                if v.lower() not in _BOOL:
                    raise ValueError(f"setting {k!r} expects a boolean, got {v!r}")
                v = _BOOL[v.lower()]
            elif t == "int":
                v = int(v)
            elif t == "float":
                v = float(v)
        kw[k] = v
    return Settings(**kw)


# ---------------------------------------------------------------- offline artifact

@dataclass
class Artifact:
    embedding: Embedding
    graph: LatentGraph
    settings: dict

    def dumps(self) -> str:
        return json.dumps({
            "version": ARTIFACT_VERSION,
            "settings": self.settings,
            "embedding": self.embedding.to_json(),
            "graph": self.graph.to_json(),
        })

    @classmethod
    def loads(cls, text: str) -> "Artifact":
        d = json.loads(text)
        if d.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported artifact format {d.get('version')!r}")
        e = Embedding.from_json(d["embedding"])
        return cls(e, LatentGraph.from_json(d["graph"], e.states), d["settings"])


def build_artifact(dataset: Sequence[Trajectory], st: Settings) -> Artifact:
    if not dataset or sum(len(t) for t in dataset) == 0:
        raise ValueError("dataset is empty")
    e = fit(harvest(dataset, delta_max=int(4 * st.htd)), st.d_latent, st.n_landmarks, st.seed)
    retained = None
    if st.tau_te > 0:
        retained = np.setdiff1d(te_prune(dataset, e, st.tau_te, st.te_h), e.stray)
    g = build_graph(dataset, e, st.htd, retained, st.support)
    keys = ("seed", "htd", "d_latent", "n_landmarks", "tau_te", "te_h", "support")
    return Artifact(e, g, {k: getattr(st, k) for k in keys})


# ---------------------------------------------------------------- episodes

@dataclass
class Episode:
    task: int
    index: int
    start: np.ndarray
    plan: Plan | None
    trace: ExecTrace | None
    success: bool
    plan_time: float
    error: str = ""


def task_graph(art: Artifact, task: TaskSpec, m: Maze, st: Settings) -> LatentGraph:
    return augment(art.graph, task.regions, art.embedding, st.n_anchors, st.anchor_mode,
                   seed=task.seed, maze=m, weighted=st.weighted_soft)


def task_starts(m: Maze, task: TaskSpec, n: int, st: Settings) -> np.ndarray:
    return sample_starts(m, task.regions, n, seed=st.seed * 100003 + task.seed)


def make_plan(g: LatentGraph, nba, s0, e: Embedding, st: Settings) -> Plan:
    if st.variant == "joint":
        return synthesize(g, nba, s0, e, st.lam, st.topk, st.tau_soft)
    return decoupled_synthesize(g, nba, s0, e, st.lam, st.tau_soft)


def run_task(art: Artifact, m: Maze, task: TaskSpec, task_id: int, st: Settings,
             starts: np.ndarray | None = None) -> list[Episode]:
    """Plan and execute every start of one task; failures become records."""
    nba = build(task.formula, task.labels)
    g = task_graph(art, task, m, st)
    nav = Navigator(m, task.regions)
    cfg = st.exec_config()
    if starts is None:
        starts = task_starts(m, task, st.episodes, st)
    out = []
    for k, s0 in enumerate(starts):
        t0 = time.perf_counter()
        try:
            p = make_plan(g, nba, s0, art.embedding, st)
        except Infeasible as exc:
            dt = time.perf_counter() - t0 if st.timing else 0.0
            out.append(Episode(task_id, k, s0, None, None, False, dt, f"infeasible: {exc}"))
            continue
        dt = time.perf_counter() - t0 if st.timing else 0.0
        tr = track(m, task.regions, g, p, art.embedding, s0, cfg, nav)
        ok = check_success(tr, nba, p)
        out.append(Episode(task_id, k, s0, p, tr, ok, dt, "" if ok else tr.outcome))
    return out


# ---------------------------------------------------------------- evaluation records

@dataclass
class EvalRecord:
    task: int
    episode: int
    variant: str
    success: bool
    plan_time: float
    length: int | None      # T_pre + T_suf of a successful episode
    t_pre: int | None
    t_suf: int | None
    outcome: str

    @classmethod
    def of(cls, ep: Episode, variant: str) -> "EvalRecord":
        tr = ep.trace
        return cls(ep.task, ep.index, variant, ep.success, ep.plan_time,
                   tr.length if (tr is not None and ep.success) else None,
                   tr.t_pre if tr is not None else None,
                   tr.t_suf if tr is not None else None,
                   "success" if ep.success else (ep.error or "failure"))


CSV_FIELDS = [f.name for f in fields(EvalRecord)]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not len(xs):
        return math.nan, math.nan
    a = np.asarray(xs, dtype=float)
    return float(a.mean()), float(a.std())


def summarize(records: Sequence[EvalRecord]) -> dict:
    """SR over episodes (std across per-task rates), time and length means."""
    n = len(records)
    succ = sum(r.success for r in records)
    by_task: dict[int, list[bool]] = {}
    for r in records:
        by_task.setdefault(r.task, []).append(r.success)
    rates = [100.0 * sum(v) / len(v) for _, v in sorted(by_task.items())]
    return {
        "episodes": n,
        "successes": succ,
        "sr": succ / n if n else math.nan,
        "sr_pct": mean_std(rates) if rates else (math.nan, math.nan),
        "plan_time": mean_std([r.plan_time for r in records]),
        "length": mean_std([r.length for r in records if r.length is not None]),
    }


def _pm(ms: tuple[float, float], digits: int = 1) -> str:
    return f"{ms[0]:.{digits}f} ± {ms[1]:.{digits}f}"


def write_csv(records: Sequence[EvalRecord], fh) -> None:
    """One row per episode, then a summary row of ``mean ± std`` cells."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([_cell(getattr(r, k)) for k in CSV_FIELDS])
    s = summarize(records)
    w.writerow(["summary", s["episodes"], records[0].variant if records else "",
                _pm(s["sr_pct"]), _pm(s["plan_time"], 3), _pm(s["length"]), "", "",
                f"{s['successes']}/{s['episodes']}"])


def read_csv(text: str) -> tuple[list[EvalRecord], list[str] | None]:
    """Episode rows back as records, plus the raw summary row if present."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_FIELDS:
        raise ValueError("not an evaluation CSV")
    out, summary = [], None
    for row in rows[1:]:
        if row[0] == "summary":
            summary = row
            continue
        d = dict(zip(CSV_FIELDS, row))
        opt = lambda x: int(x) if x != "" else None  # noqa: E731
        out.append(EvalRecord(int(d["task"]), int(d["episode"]), d["variant"], d["success"] == "1",
                              float(d["plan_time"]), opt(d["length"]), opt(d["t_pre"]),
                              opt(d["t_suf"]), d["outcome"]))
    return out, summary


def evaluate(art: Artifact, m: Maze, tasks: Sequence[TaskSpec], st: Settings) -> list[EvalRecord]:
    recs = []
    for i, t in enumerate(tasks):
        recs.extend(EvalRecord.of(ep, st.variant) for ep in run_task(art, m, t, i, st))
    return recs


# ---------------------------------------------------------------- rendering

def _f(x: float) -> str:
    return f"{x:.3f}"


def render_svg(m: Maze, task: TaskSpec, trace: ExecTrace | None = None,
               g: LatentGraph | None = None, start=None, scale: float = 20.0) -> str:
    """Walls, regions, anchors, start marker and the executed polylines.

    The prefix polyline holds the states reached by prefix steps, the suffix
    polyline those reached by suffix steps, so together they have one vertex
    per executed step. A trace without suffix steps draws no suffix polyline.
    """
    rows, cols = m.shape
    W, H = cols * m.cell_size * scale, rows * m.cell_size * scale
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(W)}" height="{_f(H)}" '
           f'viewBox="0 0 {_f(W)} {_f(H)}">',
           f'<rect x="0" y="0" width="{_f(W)}" height="{_f(H)}" fill="white"/>',
           '<g id="walls" fill="#444">']
    cs = m.cell_size * scale
    for r in range(rows):
        for c in range(cols):
            if m.walls[r, c]:
                out.append(f'<rect x="{_f(c * cs)}" y="{_f(r * cs)}" width="{_f(cs)}" height="{_f(cs)}"/>')
    out.append('</g>')
    out.append('<g id="regions" fill="#f2c14e" fill-opacity="0.5" stroke="#b8860b">')
    for reg in sorted(task.regions, key=lambda r: r.label):
        if reg.shape == "circle":
            cx, cy, rad = reg.params
            out.append(f'<circle class="region" data-label="{escape(reg.label)}" cx="{_f(cx * scale)}" '
                       f'cy="{_f(cy * scale)}" r="{_f(rad * scale)}"/>')
        else:
            x0, y0, x1, y1 = reg.params
            out.append(f'<rect class="region" data-label="{escape(reg.label)}" x="{_f(x0 * scale)}" '
                       f'y="{_f(y0 * scale)}" width="{_f((x1 - x0) * scale)}" height="{_f((y1 - y0) * scale)}"/>')
        cx, cy = reg.center
        out.append(f'<text x="{_f(cx * scale)}" y="{_f(cy * scale)}" font-size="{_f(0.4 * scale)}" '
                   f'text-anchor="middle" fill="black" stroke="none">{escape(reg.label)}</text>')
    out.append('</g>')
    if g is not None and g.anchor_label:
        out.append('<g id="anchors" fill="#2a9d8f">')
        for v in g.anchors():
            x, y = g.raw[g.anchor_source[v]]
            out.append(f'<circle class="anchor" data-label="{escape(g.anchor_label[v])}" '
                       f'cx="{_f(x * scale)}" cy="{_f(y * scale)}" r="{_f(0.08 * scale)}"/>')
        out.append('</g>')
    if trace is not None:
        n = trace.n_steps
        if trace.outcome == "success" and trace.lap_ends:
            n = trace.lap_ends[0]
        split = n if trace.prefix_end is None else min(trace.prefix_end, n)
        pre, suf = trace.states[1:split + 1], trace.states[split + 1:n + 1]
        for name, pts, colour in (("prefix", pre, "#1f5fbf"), ("suffix", suf, "#d62828")):
            if len(pts) == 0:
                continue
            coords = " ".join(f"{_f(x * scale)},{_f(y * scale)}" for x, y in pts)
            out.append(f'<polyline id="{name}" class="{name}" fill="none" stroke="{colour}" '
                       f'stroke-width="{_f(0.08 * scale)}" points="{coords}"/>')
        if start is None:
            start = trace.states[0]
    if start is not None:
        x, y = start
        out.append(f'<circle id="start" cx="{_f(x * scale)}" cy="{_f(y * scale)}" '
                   f'r="{_f(0.15 * scale)}" fill="#2b9348" stroke="black"/>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def polyline_vertices(svg: str) -> int:
    """Total vertex count over the polylines of a rendered figure."""
    return sum(len(p.split()) for p in re.findall(r'points="([^"]*)"', svg))

