"""Translation of LTL (no next) to nondeterministic Büchi automata.

The translator expands obligation sets tableau-style into a transition-based
generalized Büchi automaton, then degeneralizes it with a level counter.
Transition labels come out as DNF over literals; ``normalize_and_prune``
turns them into :class:`Guard` form (at most one required label plus a
forbidden set), which is what the planner consumes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Union

from .ltl import (
    And, Atom, FalseF, Formula, LassoWord, Not, Or, Release, TrueF, Until,
    is_nnf, to_nnf,
)


class EmptyAutomaton(Exception):
    """No accepting state survives pruning; the task is logically infeasible."""


@dataclass(frozen=True, order=True)
class Cube:
    """Conjunction of literals: every label in ``pos`` and none of ``neg``."""

    pos: frozenset[str]
    neg: frozenset[str]

    def satisfied_by(self, sigma: frozenset[str]) -> bool:
        return self.pos <= sigma and not (self.neg & sigma)

    def key(self):
        return (sorted(self.pos), sorted(self.neg))

    def __str__(self):
        lits = sorted(self.pos) + ["!" + x for x in sorted(self.neg)]
        return " & ".join(lits) if lits else "true"


@dataclass(frozen=True)
class DNF:
    cubes: tuple[Cube, ...]

    def satisfied_by(self, sigma: frozenset[str]) -> bool:
        return any(c.satisfied_by(sigma) for c in self.cubes)

    def __str__(self):
        return " | ".join(f"({c})" for c in self.cubes) if self.cubes else "false"


@dataclass(frozen=True)
class Guard:
    """At most one required label and a set of forbidden labels."""

    required: str | None
    forbidden: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.required is not None and self.required in self.forbidden:
            raise ValueError("required label cannot also be forbidden")

    def satisfied_by(self, sigma: frozenset[str]) -> bool:
        if self.required is not None and self.required not in sigma:
            return False
        return not (sigma & self.forbidden)

    def key(self):
        return (self.required or "", sorted(self.forbidden))

    def __str__(self):
        req = f"+{self.required}" if self.required else ""
        forb = ",".join("-" + x for x in sorted(self.forbidden))
        return f"{req} / {forb}"


Label = Union[DNF, Guard]


@dataclass(frozen=True)
class NBA:
    n_states: int
    initial: frozenset[int]
    transitions: tuple[tuple[int, Label, int], ...]
    accepting: frozenset[int]

    @property
    def states(self) -> range:
        return range(self.n_states)

    def outgoing(self) -> list[list[tuple[Label, int]]]:
        out: list[list[tuple[Label, int]]] = [[] for _ in range(self.n_states)]
        for q, lab, q2 in self.transitions:
            out[q].append((lab, q2))
        return out

    def is_normalized(self) -> bool:
        return all(isinstance(lab, Guard) for _, lab, _ in self.transitions)


# ---------------------------------------------------------------- translation

def _expand(obligations: Iterable[Formula]) -> list[tuple[frozenset, frozenset, frozenset]]:
    """All covers (pos, neg, next) of a conjunction of NNF formulas."""
    covers = []
    stack = [(tuple(sorted(obligations, key=str)), frozenset(), frozenset(), frozenset(), frozenset())]
    while stack:
        todo, pos, neg, nxt, done = stack.pop()
        alive = True
        branched = False
        todo = list(todo)
        while todo:
            f = todo.pop()
            if f in done:
                continue
            done = done | {f}
            if isinstance(f, TrueF):
                continue
            if isinstance(f, FalseF):
                alive = False
                break
            if isinstance(f, Atom):
                if f.name in neg:
                    alive = False
                    break
                pos = pos | {f.name}
            elif isinstance(f, Not):
                if f.arg.name in pos:
                    alive = False
                    break
                neg = neg | {f.arg.name}
            elif isinstance(f, And):
                todo += [f.right, f.left]
            elif isinstance(f, Or):
                stack.append((tuple(todo + [f.right]), pos, neg, nxt, done))
                stack.append((tuple(todo + [f.left]), pos, neg, nxt, done))
                branched = True
                break
            elif isinstance(f, Until):
                stack.append((tuple(todo + [f.left]), pos, neg, nxt | {f}, done))
                stack.append((tuple(todo + [f.right]), pos, neg, nxt, done))
                branched = True
                break
            elif isinstance(f, Release):
                stack.append((tuple(todo + [f.right]), pos, neg, nxt | {f}, done))
                stack.append((tuple(todo + [f.left, f.right]), pos, neg, nxt, done))
                branched = True
                break
            else:
                raise TypeError(f"not an NNF formula: {f!r}")
        if alive and not branched:
            covers.append((pos, neg, nxt))
    return _drop_subsumed(covers)


def _drop_subsumed(covers):
    uniq = sorted(set(covers), key=lambda c: (len(c[0]) + len(c[1]) + len(c[2]), _cover_key(c)))
    kept = []
    for c in uniq:
        if not any(k[0] <= c[0] and k[1] <= c[1] and k[2] <= c[2] for k in kept):
            kept.append(c)
    return kept


def _cover_key(c):
    return (sorted(c[0]), sorted(c[1]), sorted(map(str, c[2])))


def _set_key(s: frozenset) -> tuple[str, ...]:
    return tuple(sorted(map(str, s)))


def translate(f: Formula) -> NBA:
    """Büchi automaton accepting exactly the models of ``f``.

    Labels are DNF; feed the result to :func:`normalize_and_prune` before
    planning.
    """
    if not is_nnf(f):
        f = to_nnf(f)

    # transition-based generalized automaton over obligation sets
    start = frozenset([f])
    index = {start: 0}
    order = [start]
    edges: list[list[tuple[Cube, int]]] = []
    nexts: list[list[frozenset]] = []
    untils: set[Formula] = set()
    queue = deque([start])
    while queue:
        s = queue.popleft()
        row, row_next = [], []
        for pos, neg, nxt in _expand(s):
            if nxt not in index:
                index[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            untils.update(g for g in nxt if isinstance(g, Until))
            row.append((Cube(pos, neg), index[nxt]))
            row_next.append(nxt)
        edges.append(row)
        nexts.append(row_next)

    acc_sets = sorted(untils, key=str)
    k = len(acc_sets)

    # degeneralize: level j means acceptance sets 0..j-1 have been seen
    dstart = (0, 0)
    dindex = {dstart: 0}
    dorder = [dstart]
    dtrans: dict[tuple[int, int], list[Cube]] = {}
    queue = deque([dstart])
    while queue:
        s, lvl = queue.popleft()
        src = dindex[(s, lvl)]
        base = 0 if lvl == k else lvl
        for (cube, t), nxt in zip(edges[s], nexts[s]):
            j = base
            while j < k and acc_sets[j] not in nxt:
                j += 1
            d = (t, j)
            if d not in dindex:
                dindex[d] = len(dorder)
                dorder.append(d)
                queue.append(d)
            dtrans.setdefault((src, dindex[d]), []).append(cube)

    transitions = tuple(
        (a, DNF(tuple(sorted(set(cubes), key=Cube.key))), b)
        for (a, b), cubes in sorted(dtrans.items())
    )
    accepting = frozenset(i for i, (_, lvl) in enumerate(dorder) if lvl == k)
    return NBA(len(dorder), frozenset([0]), transitions, accepting)


# ---------------------------------------------------------------- normalization

def _guards_of(label: Label, ap: frozenset[str] | None) -> list[Guard]:
    if isinstance(label, Guard):
        return [label]
    out = []
    for cube in label.cubes:
        if cube.pos & cube.neg or len(cube.pos) > 1:
            continue
        req = next(iter(cube.pos)) if cube.pos else None
        if ap is not None and req is not None and req not in ap:
            continue
        forb = cube.neg if ap is None else cube.neg & ap
        out.append(Guard(req, frozenset(forb)))
    return out


def normalize_and_prune(nba: NBA, ap: Iterable[str] | None = None) -> NBA:
    """Guard-normalize transitions and drop what single-label words cannot use.

    Disjuncts needing two or more labels at once, or a label and its
    negation, are removed. States that are unreachable from the initial set,
    or from which no accepting cycle is reachable, are removed with their
    transitions. Accepting states that lie on no cycle stop being accepting.
    Raises :class:`EmptyAutomaton` when nothing accepting is left.
    """
    ap = None if ap is None else frozenset(ap)
    trans = set()
    for q, lab, q2 in nba.transitions:
        for g in _guards_of(lab, ap):
            trans.add((q, g, q2))

    succ: dict[int, set[int]] = {}
    pred: dict[int, set[int]] = {}
    for q, _, q2 in trans:
        succ.setdefault(q, set()).add(q2)
        pred.setdefault(q2, set()).add(q)

    reach = _closure(nba.initial, succ)
    # accepting states on a cycle within the reachable part
    live_acc = {f for f in nba.accepting & reach
                if f in _closure(succ.get(f, ()), succ)}
    useful = reach & _closure(live_acc, pred)
    if not live_acc:
        raise EmptyAutomaton("no reachable accepting cycle after pruning")

    keep = sorted(useful)
    remap = {q: i for i, q in enumerate(keep)}
    new_trans = sorted(
        ((remap[q], g, remap[q2]) for q, g, q2 in trans if q in useful and q2 in useful),
        key=lambda t: (t[0], t[2], t[1].key()),
    )
    return NBA(
        len(keep),
        frozenset(remap[q] for q in nba.initial if q in useful),
        tuple(new_trans),
        # accepting states on no cycle can never recur, so they lose the flag
        frozenset(remap[q] for q in live_acc),
    )


def _closure(seeds, succ) -> set[int]:
    seen = set(seeds)
    stack = list(seen)
    while stack:
        q = stack.pop()
        for r in succ.get(q, ()):
            if r not in seen:
                seen.add(r)
                stack.append(r)
    return seen


def build(f: Formula | str, ap: Iterable[str] | None = None) -> NBA:
    """Parse (if needed), translate and normalize in one go."""
    if isinstance(f, str):
        from .ltl import parse
        f = parse(f, ap)
    return normalize_and_prune(translate(to_nnf(f)), ap)


# ---------------------------------------------------------------- acceptance

def accepts_lasso(nba: NBA, w: LassoWord) -> bool:
    """Does some run over ``w`` visit an accepting state infinitely often?"""
    n = len(w)
    letters = [w.letter(i) for i in range(n)]
    out = nba.outgoing()

    def successors(node):
        q, i = node
        j = w.successor(i)
        return [(q2, j) for lab, q2 in out[q] if lab.satisfied_by(letters[i])]

    seen = set((q, 0) for q in nba.initial)
    stack = list(seen)
    while stack:
        node = stack.pop()
        for nb in successors(node):
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)

    loop_start = len(w.prefix)
    for node in sorted(seen):
        q, i = node
        if q not in nba.accepting or i < loop_start:
            continue
        # is node on a cycle?
        visited = set()
        stack = successors(node)
        while stack:
            nb = stack.pop()
            if nb == node:
                return True
            if nb in visited:
                continue
            visited.add(nb)
            stack.extend(successors(nb))
    return False


def dump(nba: NBA) -> str:
    """One transition per line, ``q -[+req / -f1,-f2]-> q'``; accepting states end in ``*``."""
    def name(q):
        return f"{q}*" if q in nba.accepting else str(q)

    lines = ["init " + " ".join(name(q) for q in sorted(nba.initial))]
    for q, lab, q2 in nba.transitions:
        lines.append(f"{name(q)} -[{lab}]-> {name(q2)}")
    return "\n".join(lines) + "\n"
