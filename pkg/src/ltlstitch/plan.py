"""Prefix-suffix plan synthesis over the implicit product of a latent graph
and a guard-normalized Büchi automaton.

A product state ``(v, q)`` means the robot sits at node ``v`` and the
automaton is in ``q`` after reading ``v``'s letter. Moving to ``(v', q')``
reads the letter of ``v'`` through a transition ``q -> q'``; an
automaton-only move keeps ``v' = v`` and costs nothing. Positive literals can
only be discharged at anchors, and forbidden labels are checked against soft
labels.

The initial letter is read at ``v0``: search starts from every ``(v0, q)``
with ``q`` a successor of an initial state under ``v0``.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .augment import is_safe
from .buchi import NBA, Guard
from .embed import Embedding, embed
from .graph import LatentGraph, NoPath
from .ltl import LassoWord

FORMAT_VERSION = "ltlstitch.plan/1"


class NoPrefix(Exception):
    pass


class NoCycle(Exception):
    pass


class Infeasible(Exception):
    pass


@dataclass
class Plan:
    """A lasso-shaped plan over graph nodes.

    ``prefix_run[i]`` is the automaton state before reading ``prefix[i]``, so
    ``prefix_run`` has one more entry than ``prefix`` and ends in ``q_star``.
    A non-empty ``suffix`` starts and ends at ``prefix[-1]``; its first node is
    not read again, so ``suffix_run`` runs over ``suffix[1:]`` and both ends
    are ``q_star``.
    """

    prefix: list[int]
    suffix: list[int]
    cost_pre: float
    cost_suf: float
    lam: float
    J: float
    q_star: int
    prefix_run: list[int] = field(default_factory=list)
    suffix_run: list[int] = field(default_factory=list)
    variant: str = "joint"

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "variant": self.variant,
            "prefix": list(self.prefix),
            "suffix": list(self.suffix),
            "cost_pre": self.cost_pre,
            "cost_suf": self.cost_suf,
            "lambda": self.lam,
            "J": self.J,
            "q_star": self.q_star,
            "prefix_run": list(self.prefix_run),
            "suffix_run": list(self.suffix_run),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Plan":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported plan format {d.get('version')!r}")
        return cls(
            prefix=[int(v) for v in d["prefix"]],
            suffix=[int(v) for v in d["suffix"]],
            cost_pre=float(d["cost_pre"]),
            cost_suf=float(d["cost_suf"]),
            lam=float(d["lambda"]),
            J=float(d["J"]),
            q_star=int(d["q_star"]),
            prefix_run=[int(q) for q in d.get("prefix_run", [])],
            suffix_run=[int(q) for q in d.get("suffix_run", [])],
            variant=d.get("variant", "joint"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "Plan":
        return cls.from_json(json.loads(text))


def objective(cost_pre: float, cost_suf: float, lam: float) -> float:
    return lam * cost_pre + (1 - lam) * cost_suf


# ---------------------------------------------------------------- product


class Product:
    """Implicit product of an augmented graph and a normalized NBA."""

    def __init__(self, g: LatentGraph, nba: NBA, tau_soft: float = 0.5):
        if not nba.is_normalized():
            raise ValueError("automaton labels must be guard-normalized")
        self.g = g
        self.nba = nba
        self.tau_soft = tau_soft
        self.out = nba.outgoing()
        self.adj = g.adjacency()
        self._sat: dict[tuple[int, Guard], bool] = {}
        self._stay: dict[tuple[int, int], bool] = {}
        self._h: dict[tuple[int, int], float] = {}
        self._hinfo = None

    def sat(self, v: int, guard: Guard) -> bool:
        """Can reading node ``v`` fire a transition with ``guard``?"""
        key = (v, guard)
        ok = self._sat.get(key)
        if ok is None:
            ok = ((guard.required is None or self.g.anchor_label.get(v) == guard.required)
                  and is_safe(self.g, v, guard.forbidden, self.tau_soft))
            self._sat[key] = ok
        return ok

    def free_loops(self, q: int) -> list[Guard]:
        """Requirement-free self-loop guards of ``q``."""
        return [lab for lab, q2 in self.out[q] if q2 == q and lab.required is None]

    def can_stay(self, v: int, q: int) -> bool:
        """Can ``v`` be passed through while the automaton idles in ``q``?"""
        key = (v, q)
        ok = self._stay.get(key)
        if ok is None:
            ok = any(self.sat(v, lab) for lab in self.free_loops(q))
            self._stay[key] = ok
        return ok

    def initial(self, v0: int) -> list[tuple[int, int]]:
        """Product states after reading ``v0`` from each initial automaton state."""
        out = []
        for q0 in sorted(self.nba.initial):
            for lab, q in self.out[q0]:
                if self.sat(v0, lab):
                    out.append((q, q0))
        return sorted(set(out))

    def successors(self, v: int, q: int) -> Iterator[tuple[int, int, float]]:
        """(v', q', cost) for every feasible product move out of ``(v, q)``."""
        for lab, q2 in self.out[q]:
            if q2 != q and self.sat(v, lab):
                yield v, q2, 0.0
        for v2, w in self.adj[v]:
            for lab, q2 in self.out[q]:
                if self.sat(v2, lab):
                    yield v2, q2, w

    def heuristic(self, v: int, q: int) -> float:
        """Latent distance to the nearest anchor that could let ``q`` progress.

        Zero at accepting states and where some non-self-loop transition of
        ``q`` has no positive literal. Self-loops are ignored since they never
        leave ``q``. Consistent because edge weights are latent distances.
        """
        if self._hinfo is None:
            self._hinfo = self._heuristic_info()
        labels = self._hinfo[q]
        if labels is None:
            return 0.0
        key = (v, q)
        h = self._h.get(key)
        if h is None:
            z = self.g.coords[v]
            h = min((self._anchor_tree(lab).query(z)[0] for lab in labels), default=np.inf)
            self._h[key] = float(h)
        return h

    def _heuristic_info(self):
        info = []
        for q in self.nba.states:
            if q in self.nba.accepting:
                info.append(None)
                continue
            labels = set()
            free = False
            for lab, q2 in self.out[q]:
                if q2 == q:
                    continue
                if lab.required is None:
                    free = True
                else:
                    labels.add(lab.required)
            info.append(None if free else sorted(labels))
        self._trees = {}
        return info

    def _anchor_tree(self, lab: str):
        if lab not in self._trees:
            nodes = self.g.anchors(lab)
            self._trees[lab] = _InfTree() if not nodes else cKDTree(self.g.coords[nodes])
        return self._trees[lab]


class _InfTree:
    def query(self, z):
        return np.inf, -1


# ---------------------------------------------------------------- prefix


@dataclass
class PrefixCandidate:
    nodes: list[int]     # v0 ... u
    run: list[int]       # q0 ... q*, one longer than nodes
    cost: float

    @property
    def endpoint(self) -> tuple[int, int]:
        return self.nodes[-1], self.run[-1]


def start_node(g: LatentGraph, e: Embedding, s0) -> int:
    """Nearest non-anchor node to the embedded start state."""
    return g.nearest_node(embed(e, s0), exclude_anchors=True)


def prefix_search(prod: Product, v0: int, k: int = 8) -> list[PrefixCandidate]:
    """Up to ``k`` cheapest accepting product paths with distinct endpoints, by A*."""
    if k < 1:
        raise ValueError("k must be >= 1")
    found = list(itertools.islice(iter_prefixes(prod, v0), k))
    if not found:
        raise NoPrefix("no accepting product state is reachable")
    return found


def iter_prefixes(prod: Product, v0: int) -> Iterator[PrefixCandidate]:
    """Accepting product paths in order of cost, one per endpoint."""
    acc = prod.nba.accepting
    parent: dict[tuple[int, int], tuple[int, int] | None] = {}
    start_q: dict[tuple[int, int], int] = {}
    best: dict[tuple[int, int], float] = {}
    heap = []
    for q, q0 in prod.initial(v0):
        s = (v0, q)
        if s in best:
            continue
        best[s] = 0.0
        parent[s] = None
        start_q[s] = q0
        heapq.heappush(heap, (prod.heuristic(v0, q), 0.0, v0, q))
    closed = set()
    while heap:
        f, gcost, v, q = heapq.heappop(heap)
        s = (v, q)
        if s in closed or gcost > best[s]:
            continue
        closed.add(s)
        if q in acc:
            yield _prefix_path(s, parent, start_q, gcost)
        for v2, q2, w in prod.successors(v, q):
            s2 = (v2, q2)
            if s2 in closed:
                continue
            g2 = gcost + w
            if g2 < best.get(s2, np.inf):
                h = prod.heuristic(v2, q2)
                if h == np.inf:
                    continue
                best[s2] = g2
                parent[s2] = s
                heapq.heappush(heap, (g2 + h, g2, v2, q2))


def _prefix_path(s, parent, start_q, cost) -> PrefixCandidate:
    chain = [s]
    while parent[chain[-1]] is not None:
        chain.append(parent[chain[-1]])
    chain.reverse()
    nodes = [v for v, _ in chain]
    run = [start_q[chain[0]]] + [q for _, q in chain]
    return PrefixCandidate(nodes, run, cost)


# ---------------------------------------------------------------- suffix


def _closure_costs(prod: Product, u: int, q_star: int):
    """Cheapest latent-only return u' ~> u with every node after u' idling in q*.

    Returns (dist, next) where ``next[x]`` is the node after ``x`` on the way
    to ``u``.
    """
    radj = prod.g.reverse_adjacency()
    dist = {u: 0.0}
    nxt: dict[int, int | None] = {u: None}
    if not prod.free_loops(q_star) or not prod.can_stay(u, q_star):
        return dist, nxt
    heap = [(0.0, u, -1)]
    done = set()
    while heap:
        d, x, via = heapq.heappop(heap)
        if x in done:
            continue
        done.add(x)
        dist[x] = d
        nxt[x] = None if via < 0 else via
        if x != u and not prod.can_stay(x, q_star):
            continue  # may start the return but not relay it
        for y, w in radj[x]:
            if y not in done:
                heapq.heappush(heap, (d + w, y, x))
    return dist, nxt


def suffix_search(prod: Product, u: int, q_star: int) -> tuple[list[int], list[int], float]:
    """Cheapest cycle through ``(u, q_star)``; returns (nodes, run, cost).

    An empty node list means a self-loop of ``q_star`` already holds at ``u``.
    """
    if q_star not in prod.nba.accepting:
        raise ValueError("suffix must start at an accepting state")
    for lab, q2 in prod.out[q_star]:
        if q2 == q_star and prod.sat(u, lab):
            return [], [], 0.0

    closure, nxt = _closure_costs(prod, u, q_star)
    parent: dict[tuple[int, int], tuple[int, int] | None] = {}
    best: dict[tuple[int, int], float] = {}
    heap = []
    for v2, q2, w in prod.successors(u, q_star):
        s = (v2, q2)
        if w < best.get(s, np.inf):
            best[s] = w
            parent[s] = None
            heapq.heappush(heap, (w, v2, q2))
    closed = set()
    best_total, best_end = np.inf, None
    while heap:
        d, v, q = heapq.heappop(heap)
        if d >= best_total:
            break
        s = (v, q)
        if s in closed or d > best[s]:
            continue
        closed.add(s)
        if q == q_star and v in closure:
            total = d + closure[v]
            if total < best_total:
                best_total, best_end = total, s
        for v2, q2, w in prod.successors(v, q):
            s2 = (v2, q2)
            if s2 in closed:
                continue
            if d + w < best.get(s2, np.inf):
                best[s2] = d + w
                parent[s2] = s
                heapq.heappush(heap, (d + w, v2, q2))
    if best_end is None:
        raise NoCycle(f"no cycle through node {u} in accepting state {q_star}")

    chain = [best_end]
    while parent[chain[-1]] is not None:
        chain.append(parent[chain[-1]])
    chain.reverse()
    nodes = [u] + [v for v, _ in chain]
    run = [q_star] + [q for _, q in chain]
    x = best_end[0]
    while nxt[x] is not None:
        x = nxt[x]
        nodes.append(x)
        run.append(q_star)
    return nodes, run, float(best_total)


# ---------------------------------------------------------------- synthesis


def candidates(prod: Product, v0: int, lam: float = 0.5, k: int = 8) -> list[Plan]:
    """The top-k prefixes completed by their cheapest suffixes (those admitting one).

    If none of the first k admits a suffix, enumeration continues in cost
    order until one does, so a feasible lasso is never missed.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    seen = 0
    for c in iter_prefixes(prod, v0):
        seen += 1
        if seen > k and out:
            break
        u, q_star = c.endpoint
        try:
            nodes, run, cost_suf = suffix_search(prod, u, q_star)
        except NoCycle:
            continue
        out.append(Plan(c.nodes, nodes, c.cost, cost_suf, lam,
                        objective(c.cost, cost_suf, lam), q_star, c.run, run))
    if not seen:
        raise NoPrefix("no accepting product state is reachable")
    return out


def select(cands: Sequence[Plan]) -> Plan:
    """Minimal J; ties go to smaller prefix cost, then lexicographic node ids."""
    if not cands:
        raise Infeasible("no prefix candidate admits a suffix cycle")
    return min(cands, key=lambda p: (p.J, p.cost_pre, p.prefix, p.suffix))


def synthesize(g: LatentGraph, nba: NBA, s0, e: Embedding, lam: float = 0.5, k: int = 8,
               tau_soft: float = 0.5) -> Plan:
    prod = Product(g, nba, tau_soft)
    try:
        return select(candidates(prod, start_node(g, e, s0), lam, k))
    except NoPrefix as exc:
        raise Infeasible(str(exc)) from exc


# ---------------------------------------------------------------- decoupled baseline
#
# A logical hop is a transition with a positive literal; requirement-free
# transitions are free moves. The baseline first fixes the hop sequence with
# the fewest hops, then realizes each hop on its own by the cheapest product
# segment that only uses free transitions before discharging the hop's label.


def _hop_plan(prod: Product, sources: Sequence[int], targets, from_state: int | None = None,
              enter_ok=None):
    """Fewest-hop automaton path into ``targets``; list of (q, guard, q') steps.

    With ``from_state`` the path starts with a transition out of that state
    (at least one transition is taken), otherwise at any of ``sources``.
    ``enter_ok(guard)`` filters the transitions allowed to enter a target.
    """
    heap = []
    if from_state is not None:
        for i, (lab, q2) in enumerate(prod.out[from_state]):
            if q2 in targets and enter_ok is not None and not enter_ok(lab):
                continue
            c = (int(lab.required is not None), 1)
            heap.append((c, i, q2, (from_state, lab, None)))
    else:
        heap = [((0, 0), i, q, None) for i, q in enumerate(sorted(sources))]
    heapq.heapify(heap)
    tick = len(heap)
    done = {}
    while heap:
        cost, _, q, via = heapq.heappop(heap)
        if q in done:
            continue
        done[q] = via
        if q in targets and (from_state is None or via is not None):
            steps = []
            x = q
            while done[x] is not None:
                src, lab, _ = done[x]
                steps.append((src, lab, x))
                if from_state is not None and src == from_state and len(steps) and done[x][2] is None:
                    break
                x = src
            return steps[::-1]
        for lab, q2 in prod.out[q]:
            if q2 in done or (q2 in targets and enter_ok is not None and not enter_ok(lab)):
                continue
            c = (cost[0] + int(lab.required is not None), cost[1] + 1)
            tick += 1
            heapq.heappush(heap, (c, tick, q2, (q, lab, 0)))
    return None


def _hops(steps) -> tuple[int, int]:
    return sum(lab.required is not None for _, lab, _ in steps), len(steps)


def _pick_lasso(prod: Product, sources: Sequence[int]):
    """Fewest-hop prefix to an accepting state that has a closable hop cycle.

    Closability is judged on the automaton alone: without a requirement-free
    self-loop, the cycle must re-enter the accepting state through a guard
    the label discharged on entry can satisfy again. Ties go to the shorter
    cycle, then the smaller state id and entry label.
    """
    best = None
    for q_star in sorted(prod.nba.accepting):
        entries = sorted({lab.required or "" for q, lab, q2 in prod.nba.transitions if q2 == q_star})
        free = bool(prod.free_loops(q_star))
        for ent in entries:
            last = ent or None
            steps = _hop_plan(prod, sources, {q_star}, enter_ok=lambda lab, last=last: lab.required == last)
            if steps is None or (not steps and last is not None):
                continue
            if free:
                enter_ok = None
            else:
                def enter_ok(lab, last=last):
                    return lab.required in (None, last) and last not in lab.forbidden
            if free and any(q2 == q_star for _, q2 in prod.out[q_star]):
                cyc = []
            else:
                cyc = _hop_plan(prod, [], {q_star}, from_state=q_star, enter_ok=enter_ok)
                if cyc is None:
                    continue
            key = (_hops(steps), _hops(cyc), q_star, ent)
            if best is None or key < best[0]:
                best = (key, steps)
    return None if best is None else best[1]


def _segments(steps):
    """Split automaton steps into (label or None, target state) goals."""
    goals = []
    for q, lab, q2 in steps:
        if lab.required is not None:
            goals.append((lab.required, q2))
    if steps and steps[-1][1].required is None:
        goals.append((None, steps[-1][2]))
    return goals


def _realize(prod: Product, v: int, q: int, goal_label: str | None, goal_q: int,
             goal_node: int | None = None):
    """Cheapest product segment from ``(v, q)`` reaching ``goal_q``.

    Only requirement-free transitions are used, except for the last step,
    which must fire a transition requiring ``goal_label`` into ``goal_q``.
    With ``goal_node`` the segment must also end at that node. Returns the
    visited (node, state) steps and their cost.
    """
    if goal_label is None and q == goal_q and goal_node in (None, v):
        return [], 0.0
    start = (v, q, False)
    best = {start: 0.0}
    parent = {start: None}
    heap = [(0.0, v, q, False)]
    done = set()
    while heap:
        d, x, p, final = heapq.heappop(heap)
        s = (x, p, final)
        if s in done:
            continue
        done.add(s)
        if (final or (goal_label is None and p == goal_q and s != start)) \
                and goal_node in (None, x):
            steps = []
            while parent[s] is not None:
                steps.append((s[0], s[1]))
                s = parent[s]
            return steps[::-1], d
        if final:
            continue  # fired the hop at the wrong node
        moves = []
        for lab, p2 in prod.out[p]:
            if lab.required is None:
                if p2 != p and prod.sat(x, lab):
                    moves.append((x, p2, False, 0.0))
                moves += [(x2, p2, False, w) for x2, w in prod.adj[x] if prod.sat(x2, lab)]
            elif lab.required == goal_label and p2 == goal_q:
                if p2 != p and prod.sat(x, lab):
                    moves.append((x, p2, True, 0.0))
                moves += [(x2, p2, True, w) for x2, w in prod.adj[x] if prod.sat(x2, lab)]
        for x2, p2, f2, w in moves:
            s2 = (x2, p2, f2)
            if s2 not in done and d + w < best.get(s2, np.inf):
                best[s2] = d + w
                parent[s2] = s
                heapq.heappush(heap, (d + w, x2, p2, f2))
    raise NoPath(f"cannot reach automaton state {goal_q} from node {v}")


def decoupled_synthesize(g: LatentGraph, nba: NBA, s0, e: Embedding, lam: float = 0.5,
                         tau_soft: float = 0.5) -> Plan:
    """Logic-first baseline: fewest automaton hops, then a latent path per hop."""
    prod = Product(g, nba, tau_soft)
    v0 = start_node(g, e, s0)
    init = prod.initial(v0)
    if not init:
        raise Infeasible("no automaton transition accepts the start node")
    starts = {}
    for q, q0 in init:
        starts.setdefault(q, q0)
    steps = _pick_lasso(prod, list(starts))
    if steps is None:
        raise Infeasible("no accepting automaton lasso is reachable")
    q_first = steps[0][0] if steps else min(q for q in starts if q in nba.accepting)
    prefix, run, cost_pre = [v0], [starts[q_first], q_first], 0.0
    try:
        for label, tq in _segments(steps):
            seg, c = _realize(prod, prefix[-1], run[-1], label, tq)
            prefix += [x for x, _ in seg]
            run += [p for _, p in seg]
            cost_pre += c
    except NoPath as exc:
        raise Infeasible(str(exc)) from exc
    u, q_star = prefix[-1], run[-1]

    suffix, srun, cost_suf = [], [], 0.0
    if not any(q2 == q_star and prod.sat(u, lab) for lab, q2 in prod.out[q_star]):
        if prod.free_loops(q_star) and prod.can_stay(u, q_star):
            enter_ok = None
        else:
            enter_ok = lambda lab: prod.sat(u, lab)  # noqa: E731  the loop must re-enter at u
        cycle = _hop_plan(prod, [], {q_star}, from_state=q_star, enter_ok=enter_ok)
        if cycle is None:
            raise Infeasible("accepting state lies on no automaton cycle")
        suffix, srun = [u], [q_star]
        try:
            closure, nxt = _closure_costs(prod, u, q_star)
            goals = _segments(cycle)
            for i, (label, tq) in enumerate(goals):
                seg, c = _realize(prod, suffix[-1], srun[-1], label, tq)
                if i == len(goals) - 1 and (not seg or seg[-1][0] not in closure):
                    # the last hop has to land where the loop can close
                    seg, c = _realize(prod, suffix[-1], srun[-1], label, tq, goal_node=u)
                suffix += [x for x, _ in seg]
                srun += [p for _, p in seg]
                cost_suf += c
        except NoPath as exc:
            raise Infeasible(str(exc)) from exc
        if len(suffix) == 1:
            raise Infeasible("automaton cycle could not be realized by motion")
        x = suffix[-1]
        if x not in closure:
            raise Infeasible("cannot return to the cycle start")
        cost_suf += closure[x]
        while nxt[x] is not None:
            x = nxt[x]
            suffix.append(x)
            srun.append(q_star)
    return Plan(prefix, suffix, cost_pre, cost_suf, lam, objective(cost_pre, cost_suf, lam),
                q_star, run, srun, variant="decoupled")


# ---------------------------------------------------------------- words


def node_letter(g: LatentGraph, v: int) -> frozenset[str]:
    lab = g.anchor_label.get(v)
    return frozenset() if lab is None else frozenset([lab])


def induced_word(g: LatentGraph, plan: Plan) -> LassoWord:
    """Lasso word read along the plan: anchors read their label, other nodes nothing."""
    prefix = [node_letter(g, v) for v in plan.prefix]
    if plan.suffix:
        period = [node_letter(g, v) for v in plan.suffix[1:]]
    else:
        period = [node_letter(g, plan.prefix[-1])]
    return LassoWord.of(prefix, period)


def check_run(prod: Product, plan: Plan) -> bool:
    """Does the recorded run follow real transitions and moves of the product?"""
    nba = prod.nba
    nodes, run = plan.prefix, plan.prefix_run
    if len(run) != len(nodes) + 1 or run[0] not in nba.initial or run[-1] != plan.q_star:
        return False
    if plan.q_star not in nba.accepting:
        return False

    def fires(q, v, q2):
        return any(t == q2 and prod.sat(v, lab) for lab, t in prod.out[q])

    def moves(a, b):
        return a == b or (a, b) in prod.g.edges

    for i, v in enumerate(nodes):
        if not fires(run[i], v, run[i + 1]):
            return False
        if i and not moves(nodes[i - 1], v):
            return False
        if i and nodes[i - 1] == v and run[i] == run[i + 1]:
            return False  # idle self-loop without motion adds nothing
    if not plan.suffix:
        return any(t == plan.q_star and prod.sat(nodes[-1], lab) for lab, t in prod.out[plan.q_star])
    s, srun = plan.suffix, plan.suffix_run
    if s[0] != nodes[-1] or s[-1] != nodes[-1] or len(srun) != len(s) or srun[0] != plan.q_star \
            or srun[-1] != plan.q_star or len(s) < 2:
        return False
    for i in range(1, len(s)):
        if not moves(s[i - 1], s[i]) or not fires(srun[i - 1], s[i], srun[i]):
            return False
    return True


def path_cost(g: LatentGraph, nodes: Sequence[int]) -> float:
    return float(sum(0.0 if a == b else g.edges[(a, b)] for a, b in zip(nodes, nodes[1:])))
