"""Clustering of embedded states into a weighted latent graph."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .embed import Embedding, flatten
from .world import Trajectory

FORMAT_VERSION = "ltlstitch.graph/1"


class NoPath(Exception):
    pass


@dataclass
class LatentGraph:
    """Latent nodes, directed weighted edges and the node -> raw-state index.

    ``raw`` holds every raw state a node can refer to: the dataset states
    first, then any states constructed for anchors. Augmentation fields stay
    empty on a base graph.
    """

    coords: np.ndarray                       # (N, d)
    node2raw: list[np.ndarray]               # indices into ``raw``
    edges: dict[tuple[int, int], float]
    h_td: float
    raw: np.ndarray                          # (n_raw, 2)
    n_dataset: int = 0
    fallback: frozenset[tuple[int, int]] = frozenset()
    anchor_label: dict[int, str] = field(default_factory=dict)
    anchor_source: dict[int, int] = field(default_factory=dict)  # node -> raw index
    soft: dict[int, dict[str, float]] = field(default_factory=dict)
    _adj: list | None = field(default=None, repr=False, compare=False)
    _radj: list | None = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    def is_anchor(self, v: int) -> bool:
        return v in self.anchor_label

    def anchors(self, lab: str | None = None) -> list[int]:
        return sorted(v for v, l in self.anchor_label.items() if lab is None or l == lab)

    def adjacency(self) -> list[list[tuple[int, float]]]:
        if self._adj is None:
            adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
            radj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
            for (u, v), w in sorted(self.edges.items()):
                adj[u].append((v, w))
                radj[v].append((u, w))
            self._adj, self._radj = adj, radj
        return self._adj

    def reverse_adjacency(self) -> list[list[tuple[int, float]]]:
        self.adjacency()
        return self._radj

    def weight(self, u: int, v: int) -> float:
        return self.edges[(u, v)]

    def nearest_node(self, z: np.ndarray, exclude_anchors: bool = False) -> int:
        d = np.linalg.norm(self.coords - np.asarray(z)[None, :], axis=1)
        if exclude_anchors and self.anchor_label:
            d[list(self.anchor_label)] = np.inf
        return int(np.argmin(d))

    def evolve(self, **changes) -> "LatentGraph":
        return replace(self, _adj=None, _radj=None, **changes)

    # ------------------------------------------------------------ json

    def to_json(self) -> dict:
        out = {
            "version": FORMAT_VERSION,
            "h_td": self.h_td,
            "n_dataset": self.n_dataset,
            "nodes": self.coords.tolist(),
            "node2raw": [a.tolist() for a in self.node2raw],
            "edges": [[u, v, w, (u, v) in self.fallback] for (u, v), w in sorted(self.edges.items())],
        }
        if self.anchor_label:
            out["anchors"] = [
                {"node": v, "label": self.anchor_label[v], "raw": int(self.anchor_source[v]),
                 "state": self.raw[self.anchor_source[v]].tolist()}
                for v in sorted(self.anchor_label)
            ]
        if self.soft:
            out["soft_labels"] = {str(v): dict(sorted(row.items())) for v, row in sorted(self.soft.items())}
        return out

    @classmethod
    def from_json(cls, d: dict, dataset_states: np.ndarray) -> "LatentGraph":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported graph format {d.get('version')!r}")
        n_dataset = int(d["n_dataset"])
        raw = np.asarray(dataset_states, dtype=float)[:n_dataset]
        anchor_label, anchor_source = {}, {}
        extra = []
        for a in d.get("anchors", []):
            anchor_label[int(a["node"])] = a["label"]
            anchor_source[int(a["node"])] = int(a["raw"])
            if a["raw"] >= n_dataset:
                extra.append((int(a["raw"]), a["state"]))
        if extra:
            extra.sort()
            raw = np.vstack([raw, np.array([s for _, s in extra], dtype=float)])
        coords = np.array(d["nodes"], dtype=float)
        return cls(
            coords=coords.reshape(len(d["nodes"]), -1),
            node2raw=[np.array(a, dtype=int) for a in d["node2raw"]],
            edges={(int(u), int(v)): float(w) for u, v, w, _ in d["edges"]},
            h_td=float(d["h_td"]),
            raw=raw,
            n_dataset=n_dataset,
            fallback=frozenset((int(u), int(v)) for u, v, _, fb in d["edges"] if fb),
            anchor_label=anchor_label,
            anchor_source=anchor_source,
            soft={int(k): {lab: float(p) for lab, p in row.items()}
                  for k, row in d.get("soft_labels", {}).items()},
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------- construction

def cluster(retained: np.ndarray, e: Embedding, h_td: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Greedy sequential clustering with one centroid refinement pass.

    ``retained`` are flat state indices in dataset order. Returns node
    coordinates (latent centroid of each node's members) and ``node2raw``.
    """
    if h_td <= 0:
        raise ValueError("h_td must be positive")
    retained = np.asarray(retained, dtype=int)
    if len(retained) == 0:
        raise ValueError("nothing to cluster")
    z = e.coords[retained]
    radius = h_td / 2
    centers = np.empty((len(z), z.shape[1]))
    n_c = 0
    assign = np.empty(len(z), dtype=int)
    for i, p in enumerate(z):
        if n_c:
            d = np.linalg.norm(centers[:n_c] - p, axis=1)
            j = int(np.argmin(d))
            if d[j] <= radius:
                assign[i] = j
                continue
        centers[n_c] = p
        assign[i] = n_c
        n_c += 1
    centers = _centroids(z, assign, n_c)
    assign = cKDTree(centers).query(z)[1]
    used = np.unique(assign)
    relabel = np.full(n_c, -1)
    relabel[used] = np.arange(len(used))
    assign = relabel[assign]
    coords = _centroids(z, assign, len(used))
    node2raw = [retained[assign == k] for k in range(len(used))]
    return coords, node2raw


def _centroids(z, assign, k):
    sums = np.zeros((k, z.shape[1]))
    np.add.at(sums, assign, z)
    counts = np.bincount(assign, minlength=k).astype(float)
    return sums / counts[:, None]


def transition_support(dataset: Sequence[Trajectory], node2raw: Sequence[np.ndarray],
                       horizon: int, symmetric: bool = False) -> set[tuple[int, int]]:
    """Node pairs (u, v) such that some trajectory goes from u to v within ``horizon`` steps.

    With ``symmetric`` a pair observed in one direction supports both, which
    is sound for reversible dynamics such as the point robot.
    """
    _, offsets = flatten(dataset)
    n = int(offsets[-1])
    owner = np.full(n, -1, dtype=int)
    for k, members in enumerate(node2raw):
        owner[members[members < n]] = k
    pairs = set()
    for a, b in zip(offsets[:-1], offsets[1:]):
        o = owner[a:b]
        for k in range(1, min(horizon, b - a - 1) + 1):
            src, dst = o[:-k], o[k:]
            ok = (src >= 0) & (dst >= 0) & (src != dst)
            pairs.update(zip(src[ok].tolist(), dst[ok].tolist()))
    if symmetric:
        pairs |= {(v, u) for u, v in pairs}
    return pairs


def build_edges(coords: np.ndarray, h_td: float,
                support: set[tuple[int, int]] | None = None) -> dict[tuple[int, int], float]:
    """Edges between nodes at latent distance <= h_td, weighted by that distance.

    Both directions are added; with ``support`` only pairs the data actually
    traverses are kept.
    """
    edges = {}
    if len(coords) < 2:
        return edges
    for u, v in sorted(cKDTree(coords).query_pairs(h_td)):
        w = float(np.linalg.norm(coords[u] - coords[v]))
        if w <= 0 or w > h_td:
            continue
        for a, b in ((u, v), (v, u)):
            if support is None or (a, b) in support:
                edges[(a, b)] = w
    return edges


def build_graph(dataset: Sequence[Trajectory], e: Embedding, h_td: float = 8.0,
                retained: np.ndarray | None = None, support: str = "symmetric") -> LatentGraph:
    """Cluster, then connect nodes within ``h_td``.

    ``support`` is ``"symmetric"`` (default), ``"directed"`` or ``"off"``:
    how dataset transitions filter the distance-based edges.
    """
    if support not in ("symmetric", "directed", "off"):
        raise ValueError(f"unknown support mode {support!r}")
    states, offsets = flatten(dataset)
    if retained is None:
        # states outside the main data component have only proxy coordinates
        retained = np.setdiff1d(np.arange(len(states)), e.stray)
    coords, node2raw = cluster(retained, e, h_td)
    pairs = None
    if support != "off":
        pairs = transition_support(dataset, node2raw, int(math.ceil(h_td)), support == "symmetric")
    edges = build_edges(coords, h_td, pairs)
    return LatentGraph(coords, node2raw, edges, float(h_td), states, n_dataset=len(states))


# ---------------------------------------------------------------- search

def dijkstra(adj, sources, admit: Callable[[int], bool] | None = None,
             stop: Callable[[int], bool] | None = None):
    """Uniform-cost search from ``sources``; returns (dist, parent)."""
    dist: dict[int, float] = {}
    parent: dict[int, int | None] = {}
    heap = [(0.0, s, -1) for s in sorted(set(sources))]
    heapq.heapify(heap)
    while heap:
        d, u, p = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u] = d
        parent[u] = None if p < 0 else p
        if stop is not None and stop(u):
            break
        for v, w in adj[u]:
            if v in dist or (admit is not None and not admit(v)):
                continue
            heapq.heappush(heap, (d + w, v, u))
    return dist, parent


def _unwind(parent, v):
    path = [v]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def shortest_path(g: LatentGraph, u: int, v: int,
                  node_filter: Callable[[int], bool] | None = None) -> tuple[list[int], float]:
    """Minimal-weight path u -> v; intermediate nodes must pass ``node_filter``."""
    if u == v:
        return [u], 0.0

    def admit(x):
        return x == v or node_filter is None or node_filter(x)

    dist, parent = dijkstra(g.adjacency(), [u], admit, stop=lambda x: x == v)
    if v not in dist:
        raise NoPath(f"no path from {u} to {v}")
    return _unwind(parent, v), dist[v]
