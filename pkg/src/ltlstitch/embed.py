"""Latent embedding whose Euclidean distances approximate step counts.

Step counts come straight from the data: index offsets inside each
trajectory, composed across fragments by shortest paths over a sparse graph
of dataset transitions plus short proximity links between nearby states.
Landmark MDS turns the composed distances into coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .world import Trajectory

FORMAT_VERSION = "ltlstitch.embedding/1"


class DisconnectedData(Exception):
    """Some landmark pair has no composed distance estimate."""


def flatten(dataset: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """All states stacked, and the start offset of each trajectory."""
    if not dataset:
        return np.zeros((0, 2)), np.zeros(1, dtype=int)
    lens = [len(t.states) for t in dataset]
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(int)
    return np.concatenate([t.states for t in dataset]), offsets


@dataclass
class DistanceSamples:
    states: np.ndarray       # (n, 2) raw states, flattened across trajectories
    offsets: np.ndarray      # trajectory start offsets, length n_traj + 1
    pairs: np.ndarray        # (m, 3) int rows (i, j, steps); i <= j
    links: np.ndarray        # (l, 2) proximity links between nearby states
    link_steps: np.ndarray   # (l,) link lengths in steps
    step_scale: float        # median raw distance per step

    @property
    def n_states(self) -> int:
        return len(self.states)


def harvest(dataset: Sequence[Trajectory], delta_max: int = 32,
            link_radius: float | None = None) -> DistanceSamples:
    """Index-offset samples ``(s_t, s_{t+k}, k)`` for ``k <= delta_max``.

    Self pairs ``(i, i, 0)`` are included. Proximity links join states of any
    trajectories closer than ``link_radius`` (default: two median steps); this
    radius must stay below the wall thickness so links never cross walls.
    """
    states, offsets = flatten(dataset)
    rows = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        idx = np.arange(a, b)
        rows.append(np.stack([idx, idx, np.zeros_like(idx)], axis=1))
        for k in range(1, min(delta_max, b - a - 1) + 1):
            rows.append(np.stack([idx[:-k], idx[k:], np.full(len(idx) - k, k)], axis=1))
    pairs = np.concatenate(rows).astype(int) if rows else np.zeros((0, 3), dtype=int)

    steps = [np.linalg.norm(np.diff(t.states, axis=0), axis=1) for t in dataset]
    steps = np.concatenate(steps) if steps else np.zeros(0)
    moving = steps[steps > 0]
    step_scale = float(np.median(moving)) if len(moving) else 1.0

    radius = 2 * step_scale if link_radius is None else float(link_radius)
    if len(states) > 1:
        links = np.array(sorted(cKDTree(states).query_pairs(radius)), dtype=int).reshape(-1, 2)
    else:
        links = np.zeros((0, 2), dtype=int)
    link_steps = (np.linalg.norm(states[links[:, 0]] - states[links[:, 1]], axis=1) / step_scale
                  if len(links) else np.zeros(0))
    return DistanceSamples(states, offsets, pairs, links, link_steps, step_scale)


def sample_graph(samples: DistanceSamples):
    """Symmetric sparse graph of direct samples and proximity links."""
    direct = samples.pairs[samples.pairs[:, 2] > 0]
    i = np.concatenate([direct[:, 0], samples.links[:, 0]])
    j = np.concatenate([direct[:, 1], samples.links[:, 1]])
    w = np.concatenate([direct[:, 2].astype(float), samples.link_steps])
    # zero-length links would vanish from a sparse matrix
    w = np.maximum(w, 1e-12)
    n = samples.n_states
    g = coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                   shape=(n, n)).tocsr()
    g.sum_duplicates()
    return g


@dataclass
class Embedding:
    d_latent: int
    landmarks: np.ndarray         # indices into states
    landmark_coords: np.ndarray   # (L, d)
    landmark_dist: np.ndarray     # (L, L) composed step distances
    eigvals: np.ndarray           # (d,)
    eigvecs: np.ndarray           # (L, d)
    states: np.ndarray            # (n, 2) sampled raw states
    coords: np.ndarray            # (n, d) embedding of every sampled state
    seed: int = 0
    stray: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # outside the main component
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def _kdtree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.states)
        return self._tree

    def nearest_state(self, s) -> int:
        return int(self._kdtree().query(np.asarray(s, dtype=float))[1])

    def triangulate(self, dists: np.ndarray) -> np.ndarray:
        """Coordinates of points given their step distances to the landmarks."""
        d2 = np.atleast_2d(dists) ** 2
        mu = (self.landmark_dist ** 2).mean(axis=0)
        keep = self.eigvals > 1e-12
        out = np.zeros((len(d2), self.d_latent))
        out[:, keep] = -0.5 * (d2 - mu) @ (self.eigvecs[:, keep] / np.sqrt(self.eigvals[keep]))
        return out

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "d_latent": self.d_latent,
            "seed": self.seed,
            "landmarks": self.landmarks.tolist(),
            "landmark_coords": self.landmark_coords.tolist(),
            "landmark_dist": self.landmark_dist.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "states": self.states.tolist(),
            "coords": self.coords.tolist(),
            "stray": self.stray.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Embedding":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported embedding format {d.get('version')!r}")
        dl = int(d["d_latent"])
        return cls(
            d_latent=dl,
            landmarks=np.array(d["landmarks"], dtype=int),
            landmark_coords=np.array(d["landmark_coords"], dtype=float).reshape(-1, dl),
            landmark_dist=np.array(d["landmark_dist"], dtype=float),
            eigvals=np.array(d["eigvals"], dtype=float),
            eigvecs=np.array(d["eigvecs"], dtype=float).reshape(-1, dl),
            states=np.array(d["states"], dtype=float).reshape(-1, 2),
            coords=np.array(d["coords"], dtype=float).reshape(-1, dl),
            seed=int(d["seed"]),
            stray=np.array(d.get("stray", []), dtype=int),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "Embedding":
        return cls.from_json(json.loads(text))


def _classical_mds(dist: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(dist)
    h = np.eye(n) - 1.0 / n
    b = -0.5 * h @ (dist ** 2) @ h
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1][:d]
    vals, vecs = vals[order], vecs[:, order]
    # fix eigenvector signs so output is reproducible across LAPACK builds
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            vecs[:, k] = -col
    coords = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return coords, vals, vecs


def fit(samples: DistanceSamples, d_latent: int = 8, n_landmarks: int = 128, seed: int = 0,
        min_component: float = 0.9) -> Embedding:
    """Landmark MDS on composed step distances.

    Landmarks come from farthest-point sampling over the composed distance,
    started at a seeded random state in the largest connected component of
    the sample graph. States outside that component (stray short fragments)
    take the coordinate of their nearest raw neighbour inside it. Raises
    :class:`DisconnectedData` when the main component holds less than
    ``min_component`` of the states.
    """
    n = samples.n_states
    n_landmarks = min(n_landmarks, n)
    if n_landmarks < 2:
        raise ValueError("need at least two sampled states")
    if d_latent > n_landmarks - 1:
        raise ValueError("d_latent must be at most n_landmarks - 1")
    graph = sample_graph(samples)
    n_comp, comp = connected_components(graph, directed=False)
    main = np.flatnonzero(comp == np.argmax(np.bincount(comp)))
    if len(main) < min_component * n:
        raise DisconnectedData(
            f"the data graph splits into {n_comp} components; the largest holds {len(main)} of {n} states")
    rng = np.random.default_rng(seed)

    landmarks = [int(main[rng.integers(len(main))])]
    rows = [dijkstra(graph, indices=landmarks[0])]
    nearest = rows[0].copy()
    nearest[np.isinf(nearest)] = -1.0  # never pick another component
    while len(landmarks) < n_landmarks:
        nxt = int(np.argmax(nearest))
        if nearest[nxt] <= 0:
            break  # fewer distinct states than requested landmarks
        landmarks.append(nxt)
        row = dijkstra(graph, indices=nxt)
        rows.append(row)
        nearest = np.minimum(nearest, row)
    if len(landmarks) <= d_latent:
        raise ValueError("too few distinct states for the requested latent dimension")

    dist_all = np.vstack(rows)                     # (L, n)
    lm = np.array(landmarks, dtype=int)
    ld = dist_all[:, lm]
    ld = 0.5 * (ld + ld.T)
    np.fill_diagonal(ld, 0.0)

    dl = min(d_latent, len(lm) - 1)
    lcoords, vals, vecs = _classical_mds(ld, dl)
    e = Embedding(dl, lm, lcoords, ld, vals, vecs, samples.states.copy(),
                  np.zeros((n, dl)), seed)
    coords = np.zeros((n, dl))
    coords[main] = e.triangulate(dist_all[:, main].T)
    coords[lm] = lcoords
    stray = np.flatnonzero(comp != comp[lm[0]])
    if len(stray):
        _, near = cKDTree(samples.states[main]).query(samples.states[stray])
        coords[stray] = coords[main[near]]
    e.coords = coords
    e.stray = stray
    return e


def embed(e: Embedding, s) -> np.ndarray:
    """Latent point of raw state ``s`` (its nearest sampled state stands in)."""
    return e.coords[e.nearest_state(s)].copy()


def embed_many(e: Embedding, pts: np.ndarray) -> np.ndarray:
    idx = e._kdtree().query(np.atleast_2d(pts))[1]
    return e.coords[idx]


def te_prune(dataset: Sequence[Trajectory], e: Embedding, tau_te: float = 0.0, h: int = 4) -> np.ndarray:
    """Flat indices of states whose latent speed over ``h`` steps is >= ``tau_te``.

    States within ``h`` steps of their trajectory end are always kept.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    states, offsets = flatten(dataset)
    if len(states) == 0:
        return np.zeros(0, dtype=int)
    z = embed_many(e, states)
    keep = np.ones(len(states), dtype=bool)
    if tau_te > 0:
        for a, b in zip(offsets[:-1], offsets[1:]):
            if b - a <= h:
                continue
            t = np.arange(a, b - h)
            ratio = np.linalg.norm(z[t + h] - z[t], axis=1) / h
            keep[t] = ratio >= tau_te
    return np.flatnonzero(keep)
