"""LTL without "next": formula trees, parsing, negation normal form and an
exact evaluator on ultimately periodic words.

The evaluator is deliberately automaton-free so it can serve as the
reference the Büchi translation is checked against.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence


class LTLSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownAtomError(ValueError):
    pass


class Formula:
    """Base class of the formula tree. Nodes are immutable and hashable."""

    __slots__ = ()

    def children(self) -> tuple["Formula", ...]:
        return ()


@dataclass(frozen=True, slots=True)
class TrueF(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True, slots=True)
class FalseF(Formula):
    def __str__(self):
        return "false"


@dataclass(frozen=True, slots=True)
class Atom(Formula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, slots=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __str__(self):
        return f"!{self.arg}"


@dataclass(frozen=True, slots=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True, slots=True)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"({self.left} | {self.right})"


@dataclass(frozen=True, slots=True)
class Until(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"({self.left} U {self.right})"


@dataclass(frozen=True, slots=True)
class Release(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __str__(self):
        return f"({self.left} R {self.right})"


TRUE = TrueF()
FALSE = FalseF()


def eventually(f: Formula) -> Formula:
    return Until(TRUE, f)


def always(f: Formula) -> Formula:
    return Release(FALSE, f)


def atoms(f: Formula) -> frozenset[str]:
    if isinstance(f, Atom):
        return frozenset((f.name,))
    out: frozenset[str] = frozenset()
    for c in f.children():
        out |= atoms(c)
    return out


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(->)|([!&|()])|([FGUR])|([a-z][a-z0-9_]*))")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text) - len(text[pos:].lstrip())
            raise LTLSyntaxError(f"unexpected character {text[stripped]!r}", stripped)
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    tokens.append(("<end>", len(text)))
    return tokens


class _Parser:
    # precedence, loosest first: ->  |  &  U/R  unary
    def __init__(self, text: str, ap: frozenset[str] | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.ap = ap

    def peek(self) -> str:
        return self.tokens[self.i][0]

    def take(self) -> tuple[str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, tok: str):
        got, pos = self.take()
        if got != tok:
            raise LTLSyntaxError(f"expected {tok!r}, got {got!r}", pos)

    def parse(self) -> Formula:
        f = self.implication()
        tok, pos = self.tokens[self.i]
        if tok != "<end>":
            raise LTLSyntaxError(f"unexpected token {tok!r}", pos)
        return f

    def implication(self) -> Formula:
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Or(Not(left), self.implication())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.peek() == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        if self.peek() == "R":
            self.take()
            return Release(left, self.until())
        return left

    def unary(self) -> Formula:
        tok = self.peek()
        if tok == "!":
            self.take()
            return Not(self.unary())
        if tok == "F":
            self.take()
            return eventually(self.unary())
        if tok == "G":
            self.take()
            return always(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        tok, pos = self.take()
        if tok == "(":
            f = self.implication()
            self.expect(")")
            return f
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        if re.fullmatch(r"[a-z][a-z0-9_]*", tok):
            if self.ap is not None and tok not in self.ap:
                raise UnknownAtomError(f"atom {tok!r} is not in the proposition set")
            return Atom(tok)
        raise LTLSyntaxError(f"unexpected token {tok!r}", pos)


def parse(text: str, ap: Iterable[str] | None = None) -> Formula:
    """Parse ``text``; F, G and -> are desugared into U, R, | and !.

    Unary operators bind tightest, then U (right-associative), &, | and ->.
    If ``ap`` is given every atom must belong to it.
    """
    return _Parser(text, None if ap is None else frozenset(ap)).parse()


# ---------------------------------------------------------------- NNF

def to_nnf(f: Formula) -> Formula:
    if isinstance(f, (TrueF, FalseF, Atom)):
        return f
    if isinstance(f, Not):
        return _negate(f.arg)
    if isinstance(f, And):
        return And(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Or):
        return Or(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Until):
        return Until(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Release):
        return Release(to_nnf(f.left), to_nnf(f.right))
    raise TypeError(f"not a formula: {f!r}")


def _negate(f: Formula) -> Formula:
    if isinstance(f, TrueF):
        return FALSE
    if isinstance(f, FalseF):
        return TRUE
    if isinstance(f, Atom):
        return Not(f)
    if isinstance(f, Not):
        return to_nnf(f.arg)
    if isinstance(f, And):
        return Or(_negate(f.left), _negate(f.right))
    if isinstance(f, Or):
        return And(_negate(f.left), _negate(f.right))
    if isinstance(f, Until):
        return Release(_negate(f.left), _negate(f.right))
    if isinstance(f, Release):
        return Until(_negate(f.left), _negate(f.right))
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f: Formula) -> bool:
    if isinstance(f, Not):
        return isinstance(f.arg, Atom)
    return all(is_nnf(c) for c in f.children())


# ---------------------------------------------------------------- lasso words

@dataclass(frozen=True)
class LassoWord:
    """The infinite word ``prefix . period^omega`` over label sets."""

    prefix: tuple[frozenset[str], ...]
    period: tuple[frozenset[str], ...]

    def __post_init__(self):
        if len(self.period) < 1:
            raise ValueError("period must be non-empty")

    @classmethod
    def of(cls, prefix: Sequence[Iterable[str]], period: Sequence[Iterable[str]]) -> "LassoWord":
        return cls(tuple(frozenset(s) for s in prefix), tuple(frozenset(s) for s in period))

    def __len__(self):
        return len(self.prefix) + len(self.period)

    def letter(self, i: int) -> frozenset[str]:
        p = len(self.prefix)
        if i < p:
            return self.prefix[i]
        return self.period[(i - p) % len(self.period)]

    def successor(self, i: int) -> int:
        """Position following ``i`` in the folded ``prefix + period`` layout."""
        return i + 1 if i + 1 < len(self) else len(self.prefix)


def eval_lasso(f: Formula, w: LassoWord) -> bool:
    """Exact satisfaction of ``f`` at position 0 of ``w``."""
    return _sat(f, w, {})[0]


def _sat(f: Formula, w: LassoWord, memo: dict) -> list[bool]:
    hit = memo.get(f)
    if hit is not None:
        return hit
    n = len(w)
    letters = list(w.prefix) + list(w.period)
    if isinstance(f, TrueF):
        out = [True] * n
    elif isinstance(f, FalseF):
        out = [False] * n
    elif isinstance(f, Atom):
        out = [f.name in s for s in letters]
    elif isinstance(f, Not):
        out = [not v for v in _sat(f.arg, w, memo)]
    elif isinstance(f, And):
        a, b = _sat(f.left, w, memo), _sat(f.right, w, memo)
        out = [x and y for x, y in zip(a, b)]
    elif isinstance(f, Or):
        a, b = _sat(f.left, w, memo), _sat(f.right, w, memo)
        out = [x or y for x, y in zip(a, b)]
    elif isinstance(f, (Until, Release)):
        a, b = _sat(f.left, w, memo), _sat(f.right, w, memo)
        out = _temporal_fixpoint(a, b, len(w.prefix), isinstance(f, Until))
    else:
        raise TypeError(f"not a formula: {f!r}")
    memo[f] = out
    return out


def _temporal_fixpoint(a: list[bool], b: list[bool], p: int, until: bool) -> list[bool]:
    # until:   x_i = b_i or (a_i and x_{i+1}),  least fixpoint
    # release: x_i = b_i and (a_i or x_{i+1}),  greatest fixpoint
    n = len(a)
    out = [not until] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, p - 1, -1):
            nxt = out[i + 1] if i + 1 < n else out[p]
            v = (b[i] or (a[i] and nxt)) if until else (b[i] and (a[i] or nxt))
            if v != out[i]:
                out[i] = v
                changed = True
    for i in range(p - 1, -1, -1):
        nxt = out[i + 1]
        out[i] = (b[i] or (a[i] and nxt)) if until else (b[i] and (a[i] or nxt))
    return out
