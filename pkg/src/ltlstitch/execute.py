"""Plan execution in the maze: monotone waypoint tracking with certified
anchor visits, driven by a kinematic controller.

The controller steers toward raw-space targets (anchor source states and
cluster centroids) and keeps clear of labeled regions the current leg is not
meant to enter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .buchi import NBA, accepts_lasso
from .embed import Embedding, embed
from .graph import LatentGraph
from .ltl import LassoWord
from .plan import Plan
from .world import Maze, Region, clip_action, label, segment_free, step


@dataclass
class ExecConfig:
    h_td: float = 8.0
    eps_anc: float | None = None        # default 0.5 * h_td
    max_steps: int = 20000
    suffix_laps: int = 1
    fallback_tolerance: float = 2.0
    patience: int = 50
    grid_resolution: int = 4           # navigation sub-cells per maze cell

    def __post_init__(self):
        if self.eps_anc is None:
            self.eps_anc = 0.5 * self.h_td
        if self.eps_anc <= 0 or self.max_steps <= 0 or self.h_td <= 0:
            raise ValueError("h_td, eps_anc and max_steps must be positive")
        if self.suffix_laps < 1:
            raise ValueError("suffix_laps must be >= 1")


@dataclass
class Milestone:
    node: int
    step: int
    kind: str  # "waypoint" or "anchor"


@dataclass
class ExecTrace:
    states: np.ndarray                    # (T+1, 2)
    labels: list[frozenset[str]]          # per state
    target_index: list[int]               # global progress index per state
    phase: list[str]                      # "prefix" / "suffix" / "done" per state
    milestones: list[Milestone] = field(default_factory=list)
    prefix_end: int | None = None
    lap_ends: list[int] = field(default_factory=list)
    outcome: str = "budget_exhausted"

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def t_pre(self) -> int | None:
        return self.prefix_end

    @property
    def t_suf(self) -> int | None:
        if self.prefix_end is None:
            return None
        if not self.lap_ends:
            return 0
        return self.lap_ends[0] - self.prefix_end

    @property
    def length(self) -> int | None:
        """Executed length T_pre + T_suf (one suffix lap) in steps."""
        if self.outcome != "success":
            return None
        return self.t_pre + self.t_suf

    def records(self) -> list[dict]:
        return [
            {"step": t, "x": float(s[0]), "y": float(s[1]), "labels": sorted(lab),
             "target_index": k, "phase": ph}
            for t, (s, lab, k, ph) in enumerate(zip(self.states, self.labels, self.target_index, self.phase))
        ]

    def dumps(self) -> str:
        """JSON lines: a header with events and outcome, then one record per step."""
        head = {
            "outcome": self.outcome,
            "prefix_end": self.prefix_end,
            "lap_ends": self.lap_ends,
            "milestones": [[m.node, m.step, m.kind] for m in self.milestones],
        }
        return "\n".join(json.dumps(r) for r in [head] + self.records()) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExecTrace":
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
        head, recs = lines[0], lines[1:]
        return cls(
            states=np.array([[r["x"], r["y"]] for r in recs], dtype=float).reshape(-1, 2),
            labels=[frozenset(r["labels"]) for r in recs],
            target_index=[int(r["target_index"]) for r in recs],
            phase=[r["phase"] for r in recs],
            milestones=[Milestone(int(n), int(t), k) for n, t, k in head["milestones"]],
            prefix_end=head["prefix_end"],
            lap_ends=[int(t) for t in head["lap_ends"]],
            outcome=head["outcome"],
        )


# ---------------------------------------------------------------- controller


class Navigator:
    """Geodesic steering on a refined occupancy grid, cached per target."""

    def __init__(self, m: Maze, regions: Sequence[Region] = (), resolution: int = 4):
        self.m = m
        self.regions = {r.label: r for r in regions}
        self.res = resolution
        self.sub = m.cell_size / resolution
        self.free0 = ~np.repeat(np.repeat(m.walls, resolution, axis=0), resolution, axis=1)
        rows, cols = self.free0.shape
        ys, xs = np.mgrid[0:rows, 0:cols]
        self.centers = np.stack([(xs + 0.5) * self.sub, (ys + 0.5) * self.sub], axis=-1)
        self._graphs: dict[frozenset, object] = {}
        self._fields: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def cell(self, p) -> tuple[int, int]:
        rows, cols = self.free0.shape
        r = min(max(int(p[1] // self.sub), 0), rows - 1)
        c = min(max(int(p[0] // self.sub), 0), cols - 1)
        return r, c

    def _blocked(self, avoid: frozenset) -> np.ndarray:
        free = self.free0.copy()
        margin = 0.75 * self.sub
        for lab in sorted(avoid):
            reg = self.regions[lab]
            x0, y0, x1, y1 = reg.bbox()
            r0, c0 = self.cell((x0 - margin, y0 - margin))
            r1, c1 = self.cell((x1 + margin, y1 + margin))
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    if reg.distance_to(self.centers[r, c]) <= margin:
                        free[r, c] = False
        return ~free

    def _graph(self, avoid: frozenset):
        if avoid not in self._graphs:
            blocked = self._blocked(avoid)
            free = ~blocked
            rows, cols = free.shape
            rr, cc = np.mgrid[0:rows, 0:cols]
            src, dst, wts = [], [], []
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                r2, c2 = rr + dr, cc + dc
                ok = (r2 < rows) & (c2 >= 0) & (c2 < cols)
                r1, c1, r2, c2 = rr[ok], cc[ok], r2[ok], c2[ok]
                keep = free[r1, c1] & free[r2, c2]
                if dr and dc:
                    # no corner cutting: both orthogonal neighbours must be free
                    keep &= free[r1, c2] & free[r2, c1]
                src.append((r1 * cols + c1)[keep])
                dst.append((r2 * cols + c2)[keep])
                wts.append(np.full(int(keep.sum()), float(np.hypot(dr, dc))))
            src, dst, wts = map(np.concatenate, (src, dst, wts))
            n = rows * cols
            g = coo_matrix((np.concatenate([wts, wts]), (np.concatenate([src, dst]), np.concatenate([dst, src]))),
                           shape=(n, n)).tocsr()
            self._graphs[avoid] = (g, blocked)
        return self._graphs[avoid]

    def _field(self, avoid: frozenset, target):
        tcell = self.cell(target)
        key = (avoid, tuple(np.asarray(target, dtype=float)))
        if key not in self._fields:
            g, blocked = self._graph(avoid)
            rows, cols = self.free0.shape
            sources = [tcell]
            if blocked[tcell]:
                # a target right next to an avoided region: start from the free
                # cells around it that see it directly
                near = [(r, c) for r in range(tcell[0] - 2, tcell[0] + 3)
                        for c in range(tcell[1] - 2, tcell[1] + 3)
                        if 0 <= r < rows and 0 <= c < cols and not blocked[r, c]
                        and self._clear(self.centers[r, c], target, avoid)]
                sources = near or sources
            idx = [r * cols + c for r, c in sources]
            dist, pred, _ = dijkstra(g, indices=idx, return_predecessors=True, min_only=True)
            self._fields[key] = (dist, pred)
        return self._fields[key]

    def _clear(self, p, q, avoid) -> bool:
        return segment_free(self.m, p, q) and not any(self.regions[l].segment_hits(p, q) for l in avoid)

    def action(self, s, target, v_max: float, avoid: frozenset = frozenset()) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        target = np.asarray(target, dtype=float)
        if np.allclose(s, target, atol=1e-12, rtol=0):
            return np.zeros(2)
        # never avoid the region we are in or the one holding the target
        avoid = frozenset(l for l in avoid
                          if not self.regions[l].contains(s) and not self.regions[l].contains(target))
        if self._clear(s, target, avoid):
            return clip_action(target - s, v_max)
        for av in (avoid, frozenset()):
            way = self._waypoint(s, target, av)
            if way is not None:
                return clip_action(way - s, v_max)
        return clip_action(target - s, v_max)

    def _waypoint(self, s, target, avoid):
        dist, pred = self._field(avoid, target)
        rows, cols = self.free0.shape
        r, c = self.cell(s)
        start = None
        best = np.inf
        for dr in range(-2, 3):
            for dc in range(-2, 3):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    d = dist[rr * cols + cc] + np.hypot(dr, dc)
                    if d < best and (dr == 0 and dc == 0 or self._clear(s, self.centers[rr, cc], avoid)):
                        best, start = d, rr * cols + cc
        if start is None or not np.isfinite(best):
            return None
        chain = [start]
        while pred[chain[-1]] >= 0 and len(chain) < 64:
            chain.append(int(pred[chain[-1]]))
        pts = [self.centers[i // cols, i % cols] for i in chain]
        if pred[chain[-1]] < 0:
            pts.append(target)
        for p in reversed(pts):
            if self._clear(s, p, avoid):
                return p
        return pts[0]


def controller(m: Maze, s, target, v_max: float | None = None, nav: Navigator | None = None,
               avoid: frozenset = frozenset()) -> np.ndarray:
    """Action toward ``target``: straight when clear, else along the grid geodesic."""
    nav = nav or Navigator(m)
    return nav.action(s, target, m.v_max if v_max is None else v_max, avoid)


# ---------------------------------------------------------------- tracking


def _collapse(nodes: Sequence[int]) -> list[int]:
    out = []
    for v in nodes:
        if not out or out[-1] != v:
            out.append(v)
    return out


def raw_target(g: LatentGraph, e: Embedding, m: Maze, v: int, eps: float,
               regions: Sequence[Region] = ()) -> np.ndarray:
    """Raw-space point to steer to for node ``v``.

    Anchors use their certified source state. Cluster nodes use the centroid
    of their raw states when it is free, unlabeled and embeds within ``eps``
    of the node, else the unlabeled member whose latent point is closest to
    the node (any member if all are labeled). Steering at an unlabeled point
    keeps pass-through nodes from leading the robot into a region.
    """
    if v in g.anchor_source:
        return g.raw[g.anchor_source[v]].copy()
    members = g.node2raw[v]
    pts = g.raw[members]
    c = pts.mean(axis=0)
    if m.is_free(c) and not label(regions, c) and np.linalg.norm(embed(e, c) - g.coords[v]) < eps:
        return c
    lat = np.array([e.coords[i] if i < len(e.coords) else embed(e, g.raw[i]) for i in members])
    d = np.linalg.norm(lat - g.coords[v], axis=1)
    if regions:
        inside = np.zeros(len(pts), dtype=bool)
        for r in regions:
            inside |= r.contains_many(pts)
        if not inside.all():
            d[inside] = np.inf
    return pts[int(np.argmin(d))].copy()


def track(m: Maze, regions: Sequence[Region], g: LatentGraph, plan: Plan, e: Embedding, s0,
          cfg: ExecConfig | None = None, nav: Navigator | None = None) -> ExecTrace:
    cfg = cfg or ExecConfig(h_td=g.h_td)
    nav = nav or Navigator(m, regions, cfg.grid_resolution)
    all_labels = frozenset(r.label for r in regions)
    phases = [("prefix", _collapse(plan.prefix))]
    if plan.suffix:
        phases.append(("suffix", _collapse(plan.suffix)))
    targets: dict[int, np.ndarray] = {}

    def target_of(v):
        if v not in targets:
            targets[v] = raw_target(g, e, m, v, cfg.eps_anc, regions)
        return targets[v]

    s = np.asarray(s0, dtype=float).copy()
    states, labels, tidx, phase_log = [], [], [], []
    trace = ExecTrace(np.zeros((0, 2)), labels, tidx, phase_log)
    laps, offset = 0, 0
    name, W = phases[0]
    k, j = 0, min(1, len(W) - 1)    # last reached index, current target index
    best_lat, best_raw, idle = np.inf, np.inf, 0

    for t in range(cfg.max_steps + 1):
        z = embed(e, s)
        lab = label(regions, s)
        states.append(s.copy())
        labels.append(lab)

        # reach test for the current target
        done_phase = k == len(W) - 1
        if not done_phase:
            v = W[j]
            d_lat = float(np.linalg.norm(z - g.coords[v]))
            if g.is_anchor(v):
                hit = d_lat < cfg.eps_anc and lab == {g.anchor_label[v]}
            elif j == len(W) - 1:
                hit = d_lat < cfg.eps_anc
            else:
                hit = d_lat < cfg.eps_anc or np.linalg.norm(s - target_of(v)) <= m.v_max
            if hit:
                k = j
                trace.milestones.append(Milestone(v, t, "anchor" if g.is_anchor(v) else "waypoint"))
                best_lat, best_raw, idle = np.inf, np.inf, 0
                done_phase = k == len(W) - 1

        if done_phase:
            if name == "prefix":
                trace.prefix_end = t
            else:
                trace.lap_ends.append(t)
                laps += 1
            finished = (name == "prefix" and len(phases) == 1) or (name == "suffix" and laps >= cfg.suffix_laps)
            if finished:
                tidx.append(offset + k)
                phase_log.append("done")
                trace.outcome = "success"
                break
            offset += len(W) - 1 if name == "prefix" else len(W) - 1
            name, W = phases[1]
            k, j = 0, 1
            best_lat, best_raw, idle = np.inf, np.inf, 0

        # forward scan: furthest node within reach, never past an unvisited anchor
        for i in range(max(j, k + 1), len(W)):
            thr = cfg.h_td
            if (W[i - 1], W[i]) in g.fallback:
                thr *= cfg.fallback_tolerance
            if np.linalg.norm(z - g.coords[W[i]]) <= thr:
                j = i
            if g.is_anchor(W[i]):
                break
        j = max(j, k + 1)
        tidx.append(offset + j)
        phase_log.append(name)
        if t == cfg.max_steps:
            break

        goal = target_of(W[j])
        avoid = all_labels - {g.anchor_label.get(W[j])} if g.is_anchor(W[j]) else all_labels
        a = nav.action(s, goal, m.v_max, frozenset(avoid))
        s = step(m, s, a)

        # stuck detection on latent and raw progress toward the target
        d_lat = float(np.linalg.norm(embed(e, s) - g.coords[W[j]]))
        d_raw = float(np.linalg.norm(s - goal))
        if d_lat < best_lat - 0.01 * cfg.h_td or d_raw < best_raw - 0.01 * cfg.h_td * m.v_max:
            best_lat, best_raw, idle = min(best_lat, d_lat), min(best_raw, d_raw), 0
        else:
            idle += 1
            if idle >= cfg.patience:
                trace.outcome = "stuck"
                break

    trace.states = np.array(states)
    return trace


def trace_word(trace: ExecTrace) -> LassoWord | None:
    """Lasso word of a finished trace: prefix up to prefix_end, period = first lap."""
    if trace.outcome != "success" or trace.prefix_end is None:
        return None
    pe = trace.prefix_end
    prefix = trace.labels[:pe + 1]
    if trace.lap_ends:
        period = trace.labels[pe + 1:trace.lap_ends[0] + 1]
    else:
        period = [trace.labels[pe]]
    return LassoWord.of(prefix, period)


def check_success(trace: ExecTrace, nba: NBA, plan: Plan | None = None) -> bool:
    w = trace_word(trace)
    if w is None:
        return False
    if plan is not None and plan.suffix and not trace.lap_ends:
        return False
    return accepts_lasso(nba, w)


def check_invariants(trace: ExecTrace, g: LatentGraph, e: Embedding, plan: Plan,
                     cfg: ExecConfig) -> list[str]:
    """Executor invariant violations found in ``trace`` (empty when clean)."""
    bad = []
    if any(b < a for a, b in zip(trace.target_index, trace.target_index[1:])):
        bad.append("progress index decreased")
    steps = [ms.step for ms in trace.milestones]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        bad.append("milestone steps not strictly increasing")
    for ms in trace.milestones:
        if ms.kind != "anchor":
            continue
        z = embed(e, trace.states[ms.step])
        if not (np.linalg.norm(z - g.coords[ms.node]) < cfg.eps_anc
                and trace.labels[ms.step] == {g.anchor_label[ms.node]}):
            bad.append(f"anchor milestone at step {ms.step} fails the reach condition")
    if trace.prefix_end is not None and any(t < trace.prefix_end for t in trace.lap_ends):
        bad.append("lap boundary before prefix end")
    if plan.suffix:
        start = plan.suffix[0]
        for t in trace.lap_ends:
            if np.linalg.norm(embed(e, trace.states[t]) - g.coords[start]) >= cfg.eps_anc:
                bad.append(f"lap ending at step {t} does not close near the suffix start")
    return bad
