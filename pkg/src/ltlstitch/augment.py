"""Task-specific semantics on a latent graph: soft labels and anchor nodes."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .embed import Embedding, embed
from .graph import LatentGraph
from .world import Maze, Region, label


class EmptyRegion(Exception):
    pass


def soft_labels(g: LatentGraph, regions: Sequence[Region], e: Embedding | None = None,
                weighted: bool = False) -> dict[int, dict[str, float]]:
    """Fraction of each node's raw states inside each region.

    With ``weighted`` the members are weighted by a Gaussian of their latent
    distance to the node (bandwidth ``h_td / 2``), which needs ``e``.
    Zero entries are omitted.
    """
    if weighted and e is None:
        raise ValueError("proximity weighting needs the embedding")
    inside = {r.label: r.contains_many(g.raw) for r in regions}
    table: dict[int, dict[str, float]] = {}
    for v, members in enumerate(g.node2raw):
        if weighted:
            z = np.array([_latent_of(g, e, i) for i in members])
            d2 = ((z - g.coords[v]) ** 2).sum(axis=1)
            wts = np.exp(-d2 / (2 * (g.h_td / 2) ** 2))
        else:
            wts = np.ones(len(members))
        total = wts.sum()
        row = {}
        for lab, mask in inside.items():
            p = float(wts[mask[members]].sum() / total) if total > 0 else 0.0
            if p > 0:
                row[lab] = p
        if row:
            table[v] = row
    return table


def _latent_of(g: LatentGraph, e: Embedding, raw_index: int) -> np.ndarray:
    if raw_index < g.n_dataset:
        return e.coords[raw_index]
    return embed(e, g.raw[raw_index])


def _anchor_states(region: Region, all_regions, n_s, mode, g, maze, rng) -> list[tuple[int | None, np.ndarray]]:
    """(existing raw index or None, state) pairs certified inside ``region``."""
    if mode == "retrieve":
        data = g.raw[:g.n_dataset]
        hits = np.flatnonzero(region.contains_many(data))
        hits = [int(i) for i in hits if label(all_regions, data[i]) == {region.label}]
        if hits:
            pick = rng.choice(len(hits), size=min(n_s, len(hits)), replace=False)
            return [(hits[k], data[hits[k]].copy()) for k in sorted(pick)]
    out = []
    for _ in range(n_s):
        for _ in range(1000):
            s = region.sample(rng)
            if (maze is None or maze.is_free(s)) and label(all_regions, s) == {region.label}:
                out.append((None, s))
                break
        else:
            raise EmptyRegion(f"no free state found inside region {region.label!r}")
    return out


def make_anchors(g: LatentGraph, regions: Sequence[Region], n_s: int, e: Embedding,
                 mode: str = "construct", seed: int = 0, maze: Maze | None = None) -> LatentGraph:
    """Add ``n_s`` anchor nodes per region and connect them.

    Anchors get edges to every node within ``h_td`` (both directions). An
    anchor left isolated is joined to its nearest non-anchor node by a pair
    of edges flagged as fallback.
    """
    if mode not in ("construct", "retrieve"):
        raise ValueError(f"unknown anchor mode {mode!r}")
    rng = np.random.default_rng(seed)
    coords = [c for c in g.coords]
    node2raw = list(g.node2raw)
    raw = [g.raw]
    n_raw = len(g.raw)
    anchor_label = dict(g.anchor_label)
    anchor_source = dict(g.anchor_source)
    new_nodes = []
    for region in sorted(regions, key=lambda r: r.label):
        for idx, s in _anchor_states(region, regions, n_s, mode, g, maze, rng):
            if idx is None:
                raw.append(s[None, :])
                idx = n_raw
                n_raw += 1
            v = len(coords)
            coords.append(embed(e, s))
            node2raw.append(np.array([idx], dtype=int))
            anchor_label[v] = region.label
            anchor_source[v] = idx
            new_nodes.append(v)

    coords = np.array(coords)
    edges = dict(g.edges)
    fallback = set(g.fallback)
    base = [u for u in range(g.n_nodes) if u not in g.anchor_label]
    for v in new_nodes:
        d = np.linalg.norm(coords - coords[v], axis=1)
        for u in np.flatnonzero((d <= g.h_td) & (d > 0)):
            u = int(u)
            if u == v:
                continue
            edges[(u, v)] = float(d[u])
            edges[(v, u)] = float(d[u])
    for v in new_nodes:
        if any(a == v or b == v for a, b in edges):
            continue
        if not base:
            continue
        d = np.linalg.norm(coords[base] - coords[v], axis=1)
        u = base[int(np.argmin(d))]
        w = max(float(d.min()), 1e-9)
        edges[(u, v)] = w
        edges[(v, u)] = w
        fallback |= {(u, v), (v, u)}
    return g.evolve(coords=coords, node2raw=node2raw, edges=edges, raw=np.vstack(raw),
                    anchor_label=anchor_label, anchor_source=anchor_source,
                    fallback=frozenset(fallback))


def augment(g: LatentGraph, regions: Sequence[Region], e: Embedding, n_s: int = 5,
            mode: str = "construct", seed: int = 0, maze: Maze | None = None,
            weighted: bool = False) -> LatentGraph:
    """Anchors for every region, then soft labels for every node."""
    g2 = make_anchors(g, regions, n_s, e, mode, seed, maze)
    return g2.evolve(soft=soft_labels(g2, regions, e, weighted))


def is_safe(g: LatentGraph, v: int, forbidden: Iterable[str], tau_soft: float = 0.5) -> bool:
    """No forbidden label is likely at ``v``; anchors must not carry one."""
    row = g.soft.get(v, {})
    for lab in forbidden:
        if row.get(lab, 0.0) >= tau_soft:
            return False
        if g.anchor_label.get(v) == lab:
            return False
    return True
