"""Kinematic point robot in a 2D grid maze, labeled regions and offline
dataset generation.

Coordinates: cell ``(r, c)`` covers ``[c*cs, (c+1)*cs) x [r*cs, (r+1)*cs)``
with ``cs`` the cell size, so ``x`` runs along columns and ``y`` along rows.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PRESETS = {"medium": 16, "large": 25, "giant": 40}

# back-off from a wall contact, in world units
_CONTACT_EPS = 1e-9


@dataclass(frozen=True)
class Maze:
    walls: np.ndarray  # bool, shape (rows, cols), True = wall
    cell_size: float = 1.0
    v_max: float = 0.25

    def __post_init__(self):
        w = np.asarray(self.walls, dtype=bool)
        object.__setattr__(self, "walls", w)
        w.setflags(write=False)
        if w.ndim != 2 or min(w.shape) < 3:
            raise ValueError("maze grid must be 2D and at least 3x3")
        if not (w[0].all() and w[-1].all() and w[:, 0].all() and w[:, -1].all()):
            raise ValueError("boundary cells must be walls")
        if w.all():
            raise ValueError("maze has no free cell")

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    @property
    def extent(self) -> tuple[float, float]:
        rows, cols = self.walls.shape
        return cols * self.cell_size, rows * self.cell_size

    def cell_of(self, p) -> tuple[int, int]:
        return int(math.floor(p[1] / self.cell_size)), int(math.floor(p[0] / self.cell_size))

    def cell_center(self, cell) -> np.ndarray:
        r, c = cell
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])

    def is_wall_cell(self, r: int, c: int) -> bool:
        rows, cols = self.walls.shape
        if r < 0 or c < 0 or r >= rows or c >= cols:
            return True
        return bool(self.walls[r, c])

    def is_free(self, p) -> bool:
        return not self.is_wall_cell(*self.cell_of(p))

    def free_mask(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        r = np.floor(pts[:, 1] / self.cell_size).astype(int)
        c = np.floor(pts[:, 0] / self.cell_size).astype(int)
        rows, cols = self.walls.shape
        ok = (r >= 0) & (c >= 0) & (r < rows) & (c < cols)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = ~self.walls[r[ok], c[ok]]
        return out

    def free_cells(self) -> list[tuple[int, int]]:
        return [tuple(map(int, rc)) for rc in np.argwhere(~self.walls)]


# ---------------------------------------------------------------- mazes

def make_maze(size: int | str = "medium", seed: int = 0, loop_prob: float = 0.15,
              cell_size: float = 1.0, v_max: float = 0.25) -> Maze:
    """Random maze of 2-cell-wide corridors separated by 1-cell walls.

    A randomized depth-first spanning tree over the room lattice guarantees
    connectivity; each remaining interior wall between rooms is opened with
    probability ``loop_prob`` to create alternative routes.
    """
    n = PRESETS[size] if isinstance(size, str) else int(size)
    if (n - 1) % 3 or n < 4:
        raise ValueError("grid size must be 3k+1 with k >= 1")
    k = (n - 1) // 3
    rng = np.random.default_rng(seed)
    walls = np.ones((n, n), dtype=bool)
    for i in range(k):
        for j in range(k):
            walls[3 * i + 1:3 * i + 3, 3 * j + 1:3 * j + 3] = False

    def open_between(a, b):
        (i1, j1), (i2, j2) = sorted([a, b])
        if i1 == i2:
            walls[3 * i1 + 1:3 * i1 + 3, 3 * j1 + 3] = False
        else:
            walls[3 * i1 + 3, 3 * j1 + 1:3 * j1 + 3] = False

    seen = {(0, 0)}
    stack = [(0, 0)]
    tree = set()
    while stack:
        i, j = stack[-1]
        nbrs = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < k and 0 <= j + dj < k and (i + di, j + dj) not in seen]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[rng.integers(len(nbrs))]
        open_between((i, j), nxt)
        tree.add(frozenset([(i, j), nxt]))
        seen.add(nxt)
        stack.append(nxt)
    for i in range(k):
        for j in range(k):
            for nb in ((i + 1, j), (i, j + 1)):
                if nb[0] < k and nb[1] < k and frozenset([(i, j), nb]) not in tree:
                    if rng.random() < loop_prob:
                        open_between((i, j), nb)
    return Maze(walls, cell_size, v_max)


def corridor_maze(length: int = 30, width: int = 1, cell_size: float = 1.0,
                  v_max: float = 0.25) -> Maze:
    walls = np.ones((width + 2, length + 2), dtype=bool)
    walls[1:-1, 1:-1] = False
    return Maze(walls, cell_size, v_max)


# ---------------------------------------------------------------- dynamics

def first_wall_contact(m: Maze, p, d) -> float | None:
    """Parameter ``t`` in [0, 1] where ``p + t*d`` first touches a wall cell.

    Grid traversal of the segment; an exact corner crossing counts as contact
    if any of the three cells meeting there is a wall.
    """
    px, py = float(p[0]), float(p[1])
    dx, dy = float(d[0]), float(d[1])
    cs = m.cell_size
    r, c = m.cell_of((px, py))
    if m.is_wall_cell(r, c):
        return 0.0
    if dx == 0.0 and dy == 0.0:
        return None
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    inf = math.inf
    if dx != 0.0:
        tmx = (((c + 1) if dx > 0 else c) * cs - px) / dx
        tdx = cs / abs(dx)
    else:
        tmx, tdx = inf, inf
    if dy != 0.0:
        tmy = (((r + 1) if dy > 0 else r) * cs - py) / dy
        tdy = cs / abs(dy)
    else:
        tmy, tdy = inf, inf
    while True:
        t = min(tmx, tmy)
        if t > 1.0:
            return None
        if tmx < tmy:
            c += sx
            tmx += tdx
            if m.is_wall_cell(r, c):
                return max(t, 0.0)
        elif tmy < tmx:
            r += sy
            tmy += tdy
            if m.is_wall_cell(r, c):
                return max(t, 0.0)
        else:
            if m.is_wall_cell(r, c + sx) or m.is_wall_cell(r + sy, c) or m.is_wall_cell(r + sy, c + sx):
                return max(t, 0.0)
            r += sy
            c += sx
            tmx += tdx
            tmy += tdy


def segment_free(m: Maze, p, q) -> bool:
    p = np.asarray(p, dtype=float)
    return first_wall_contact(m, p, np.asarray(q, dtype=float) - p) is None


def step(m: Maze, s, a) -> np.ndarray:
    """Move by ``a``; stop just short of the first wall contact (no sliding)."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    t = first_wall_contact(m, s, a)
    if t is None:
        return s + a
    norm = math.hypot(a[0], a[1])
    if norm == 0.0:
        return s.copy()
    t = max(0.0, t - _CONTACT_EPS / norm)
    out = s + t * a
    if not m.is_free(out):
        return s.copy()
    return out


def clip_action(a, v_max: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    n = math.hypot(a[0], a[1])
    if n > v_max:
        a = a * (v_max / n)
    return a


# ---------------------------------------------------------------- regions

@dataclass(frozen=True)
class Region:
    label: str
    shape: str  # "circle" or "rect"
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))
        if self.shape == "circle":
            if len(self.params) != 3 or self.params[2] <= 0:
                raise ValueError("circle params are (cx, cy, r) with r > 0")
        elif self.shape == "rect":
            if len(self.params) != 4 or self.params[0] >= self.params[2] or self.params[1] >= self.params[3]:
                raise ValueError("rect params are (x0, y0, x1, y1) with x0 < x1, y0 < y1")
        else:
            raise ValueError(f"unknown region shape {self.shape!r}")

    def contains(self, p) -> bool:
        x, y = float(p[0]), float(p[1])
        if self.shape == "circle":
            cx, cy, r = self.params
            return (x - cx) ** 2 + (y - cy) ** 2 <= r * r
        x0, y0, x1, y1 = self.params
        return x0 <= x <= x1 and y0 <= y <= y1

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.shape == "circle":
            cx, cy, r = self.params
            return (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2 <= r * r
        x0, y0, x1, y1 = self.params
        return (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)

    def bbox(self) -> tuple[float, float, float, float]:
        if self.shape == "circle":
            cx, cy, r = self.params
            return cx - r, cy - r, cx + r, cy + r
        return self.params

    @property
    def center(self) -> np.ndarray:
        if self.shape == "circle":
            return np.array(self.params[:2])
        x0, y0, x1, y1 = self.params
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2])

    def in_free_space(self, m: Maze) -> bool:
        # conservative: every cell touched by the bounding box is free
        x0, y0, x1, y1 = self.bbox()
        cs = m.cell_size
        for r in range(int(math.floor(y0 / cs)), int(math.floor(y1 / cs)) + 1):
            for c in range(int(math.floor(x0 / cs)), int(math.floor(x1 / cs)) + 1):
                if m.is_wall_cell(r, c):
                    return False
        return True

    def distance_to(self, p) -> float:
        """Euclidean distance from ``p`` to the region (0 inside)."""
        x, y = float(p[0]), float(p[1])
        if self.shape == "circle":
            cx, cy, r = self.params
            return max(0.0, math.hypot(x - cx, y - cy) - r)
        x0, y0, x1, y1 = self.params
        dx = max(x0 - x, 0.0, x - x1)
        dy = max(y0 - y, 0.0, y - y1)
        return math.hypot(dx, dy)

    def intersects(self, other: "Region", margin: float = 0.0) -> bool:
        """Closed-set intersection test, optionally inflated by ``margin``."""
        if self.shape == "circle" and other.shape == "circle":
            (ax, ay, ar), (bx, by, br) = self.params, other.params
            return math.hypot(ax - bx, ay - by) <= ar + br + margin
        if self.shape == "rect" and other.shape == "rect":
            a, b = self.params, other.params
            return not (a[2] + margin < b[0] or b[2] + margin < a[0]
                        or a[3] + margin < b[1] or b[3] + margin < a[1])
        circ, rect = (self, other) if self.shape == "circle" else (other, self)
        cx, cy, r = circ.params
        return rect.distance_to((cx, cy)) <= r + margin

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.shape == "circle":
            cx, cy, r = self.params
            rad = r * math.sqrt(rng.random())
            ang = 2 * math.pi * rng.random()
            return np.array([cx + rad * math.cos(ang), cy + rad * math.sin(ang)])
        x0, y0, x1, y1 = self.params
        return np.array([x0 + (x1 - x0) * rng.random(), y0 + (y1 - y0) * rng.random()])

    def segment_hits(self, p, q) -> bool:
        """Does the closed segment p-q touch the region?"""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.shape == "circle":
            c = np.array(self.params[:2])
            d = q - p
            dd = float(d @ d)
            t = 0.0 if dd == 0 else min(1.0, max(0.0, float((c - p) @ d) / dd))
            return float(np.linalg.norm(p + t * d - c)) <= self.params[2]
        # Liang-Barsky clip against the rectangle
        x0, y0, x1, y1 = self.params
        d = q - p
        t0, t1 = 0.0, 1.0
        for pk, qk in ((-d[0], p[0] - x0), (d[0], x1 - p[0]), (-d[1], p[1] - y0), (d[1], y1 - p[1])):
            if pk == 0:
                if qk < 0:
                    return False
            else:
                t = qk / pk
                if pk < 0:
                    t0 = max(t0, t)
                else:
                    t1 = min(t1, t)
                if t0 > t1:
                    return False
        return True

    def to_json(self) -> dict:
        return {"label": self.label, "shape": self.shape, "params": list(self.params)}

    @classmethod
    def from_json(cls, d: dict) -> "Region":
        return cls(d["label"], d["shape"], tuple(d["params"]))


def label(regions: Iterable[Region], s) -> frozenset[str]:
    """Labels of every (closed) region containing ``s``."""
    return frozenset(r.label for r in regions if r.contains(s))


def regions_disjoint(regions: Sequence[Region], margin: float = 0.0) -> bool:
    return not any(regions[i].intersects(regions[j], margin)
                   for i in range(len(regions)) for j in range(i + 1, len(regions)))


# ---------------------------------------------------------------- grid search

_NBR4 = ((1, 0), (-1, 0), (0, 1), (0, -1))


def cell_distances(m: Maze, source: tuple[int, int]) -> np.ndarray:
    """4-connected BFS hop counts from ``source``; -1 where unreachable."""
    dist = np.full(m.shape, -1, dtype=int)
    if m.is_wall_cell(*source):
        return dist
    dist[source] = 0
    q = deque([source])
    while q:
        r, c = q.popleft()
        for dr, dc in _NBR4:
            nr, nc = r + dr, c + dc
            if not m.is_wall_cell(nr, nc) and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                q.append((nr, nc))
    return dist


def cell_path(m: Maze, a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]] | None:
    dist = cell_distances(m, b)
    if dist[a] < 0:
        return None
    path = [a]
    r, c = a
    while (r, c) != b:
        for dr, dc in _NBR4:
            nr, nc = r + dr, c + dc
            if not m.is_wall_cell(nr, nc) and dist[nr, nc] == dist[r, c] - 1:
                r, c = nr, nc
                break
        path.append((r, c))
    return path


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray   # (T+1, 2)
    actions: np.ndarray  # (T, 2)

    def __post_init__(self):
        if len(self.states) < 2 or len(self.actions) != len(self.states) - 1:
            raise ValueError("trajectory needs >= 2 states and one action per transition")

    def __len__(self):
        return len(self.actions)

    def to_json(self) -> dict:
        return {"states": self.states.tolist(), "actions": self.actions.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Trajectory":
        return cls(np.array(d["states"], dtype=float).reshape(-1, 2),
                   np.array(d["actions"], dtype=float).reshape(-1, 2))


class _PathFollower:
    """Noisy carrot-following along a polyline of cell centers."""

    def __init__(self, pts: np.ndarray):
        self.pts = pts
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.cum[-1])
        self.progress = 0.0

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(i, len(self.pts) - 2)
        seg = self.cum[i + 1] - self.cum[i]
        u = 0.0 if seg == 0 else (s - self.cum[i]) / seg
        return self.pts[i] + u * (self.pts[i + 1] - self.pts[i])

    def project(self, p: np.ndarray):
        i0 = max(0, int(np.searchsorted(self.cum, self.progress, side="right")) - 2)
        best, best_s = math.inf, self.progress
        for i in range(i0, min(i0 + 4, len(self.pts) - 1)):
            a, b = self.pts[i], self.pts[i + 1]
            d = b - a
            dd = float(d @ d)
            u = 0.0 if dd == 0 else min(1.0, max(0.0, float((p - a) @ d) / dd))
            dist = float(np.linalg.norm(a + u * d - p))
            if dist < best:
                best, best_s = dist, self.cum[i] + u * math.sqrt(dd)
        self.progress = max(self.progress, best_s)


def _random_free_point(m: Maze, rng: np.random.Generator, cells=None) -> np.ndarray:
    cells = cells if cells is not None else m.free_cells()
    r, c = cells[rng.integers(len(cells))]
    return np.array([(c + rng.random()) * m.cell_size, (r + rng.random()) * m.cell_size])


def _navigate_rollout(m: Maze, rng, cells, noise: float, max_len: int, min_hops: int = 2) -> Trajectory:
    while True:
        a = cells[rng.integers(len(cells))]
        b = cells[rng.integers(len(cells))]
        path = cell_path(m, a, b)
        if path is not None and len(path) - 1 >= min_hops:
            break
    pts = np.array([m.cell_center(rc) for rc in path])
    follower = _PathFollower(pts)
    goal = pts[-1]
    s = pts[0].copy()
    states, actions = [s], []
    for _ in range(max_len):
        if np.linalg.norm(goal - s) <= 1e-9:
            break
        carrot = follower.point_at(follower.progress + 2 * m.v_max)
        act = clip_action(carrot - s, m.v_max)
        act = clip_action(act + rng.normal(0.0, noise, size=2) * math.hypot(*act), m.v_max)
        s = step(m, s, act)
        states.append(s)
        actions.append(act)
        follower.project(s)
        if follower.progress >= follower.length - 2 * m.v_max and np.linalg.norm(goal - s) <= m.v_max:
            act = goal - s
            if segment_free(m, s, goal):
                s = step(m, s, act)
                states.append(s)
                actions.append(act)
            break
    return Trajectory(np.array(states), np.array(actions).reshape(-1, 2))


def _explore_rollout(m: Maze, rng, cells, length: int, momentum: float) -> Trajectory:
    s = _random_free_point(m, rng, cells)
    v = np.zeros(2)
    states, actions = [s], []
    for _ in range(length):
        ang = 2 * math.pi * rng.random()
        v = momentum * v + (1 - momentum) * m.v_max * np.array([math.cos(ang), math.sin(ang)])
        act = clip_action(v / max(1e-12, np.linalg.norm(v)) * m.v_max * (0.5 + 0.5 * rng.random()), m.v_max)
        s2 = step(m, s, act)
        if np.linalg.norm(s2 - s) < 0.5 * np.linalg.norm(act):
            v = -v  # bounce off walls instead of pushing into them
        s = s2
        states.append(s)
        actions.append(act)
    return Trajectory(np.array(states), np.array(actions).reshape(-1, 2))


def gen_dataset(m: Maze, regime: str, seed: int = 0, n_rollouts: int = 100,
                max_len: int = 400, frag_len: int = 25, noise: float = 0.2,
                explore_len: int = 100, momentum: float = 0.8) -> list[Trajectory]:
    """Task-agnostic trajectories in one of three regimes.

    ``navigate``: noisy geodesic rollouts between random free cells.
    ``stitch``: the same rollouts cut into disjoint fragments of at most
    ``frag_len`` transitions. ``explore``: momentum random walks.
    """
    if n_rollouts <= 0 or max_len <= 0 or explore_len <= 0:
        raise ValueError("counts and lengths must be positive")
    if frag_len < 2:
        raise ValueError("fragment length must be >= 2")
    if regime not in ("navigate", "stitch", "explore"):
        raise ValueError(f"unknown regime {regime!r}")
    rng = np.random.default_rng(seed)
    cells = m.free_cells()
    out: list[Trajectory] = []
    for _ in range(n_rollouts):
        if regime == "explore":
            out.append(_explore_rollout(m, rng, cells, explore_len, momentum))
            continue
        traj = _navigate_rollout(m, rng, cells, noise, max_len)
        if regime == "navigate":
            out.append(traj)
            continue
        # disjoint chunks of frag_len + 1 states; the transition between chunks is dropped
        n = len(traj.states)
        for start in range(0, n, frag_len + 1):
            stop = min(start + frag_len + 1, n)
            if stop - start >= 2:
                out.append(Trajectory(traj.states[start:stop], traj.actions[start:stop - 1]))
    return out


# ---------------------------------------------------------------- file formats

def save_maze(m: Maze, path) -> None:
    rows = ["".join("#" if w else "." for w in row) for row in m.walls]
    Path(path).write_text(f"{m.cell_size!r} {m.v_max!r}\n" + "\n".join(rows) + "\n")


def load_maze(path) -> Maze:
    lines = [ln.rstrip("\n") for ln in Path(path).read_text().splitlines() if ln.strip()]
    cs, vmax = (float(x) for x in lines[0].split())
    grid = np.array([[ch == "#" for ch in ln] for ln in lines[1:]], dtype=bool)
    return Maze(grid, cs, vmax)


def save_dataset(trajs: Sequence[Trajectory], path) -> None:
    with open(path, "w") as fh:
        for t in trajs:
            fh.write(json.dumps(t.to_json()) + "\n")


def load_dataset(path) -> list[Trajectory]:
    with open(path) as fh:
        return [Trajectory.from_json(json.loads(ln)) for ln in fh if ln.strip()]


def save_regions(regions: Sequence[Region], path) -> None:
    Path(path).write_text(json.dumps([r.to_json() for r in regions]) + "\n")


def load_regions(path) -> list[Region]:
    return [Region.from_json(d) for d in json.loads(Path(path).read_text())]
