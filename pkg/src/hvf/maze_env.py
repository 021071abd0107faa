"""Continuous 2D maze with vertical walls, one gap per wall.

The arena is the unit square. Walls are vertical slabs of fixed thickness
split by a single gap; the agent is a point that moves by clipped
delta-Cartesian actions and stops at the first contact (no sliding).

Batched helpers (``step_batch``, ``free_space_mask``) operate on ``(N, 2)``
position arrays against a single layout; the scalar API wraps them so both
paths share one code path and agree bitwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

__all__ = [
    "Difficulty",
    "Geometry",
    "WallLayout",
    "MazeState",
    "sample_scene",
    "step",
    "step_batch",
    "is_success",
    "is_free_space",
    "free_space_mask",
    "gap_positions",
    "section_of",
    "segment_hits_wall",
    "project_to_free",
]


class Difficulty(str, enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def spawn_section(self) -> int:
        # sections are indexed left to right; easy spawns beside the goal
        return {"easy": -1, "medium": 1, "hard": 0}[self.value]


@dataclass(frozen=True)
class Geometry:
    """Scene sampling ranges and motion limits."""

    wall_x_ranges: tuple[tuple[float, float], ...] = ((0.28, 0.38), (0.60, 0.72))
    gap_center_range: tuple[float, float] = (0.15, 0.85)
    gap_half_width: float = 0.07
    wall_thickness: float = 0.04
    a_max: float = 0.1
    success_radius: float = 0.05
    contact_eps: float = 1e-6
    spawn_margin: float = 0.02

    def __post_init__(self):
        if not 0 < self.gap_half_width < 0.5:
            raise ValueError(f"gap_half_width must be in (0, 0.5), got {self.gap_half_width}")
        if not 0 < self.wall_thickness < 0.1:
            raise ValueError(f"wall_thickness must be in (0, 0.1), got {self.wall_thickness}")
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        lo, hi = self.gap_center_range
        if lo - self.gap_half_width < 0 or hi + self.gap_half_width > 1:
            raise ValueError("gap_center_range lets gaps leave the arena")


DEFAULT_GEOMETRY = Geometry()


@dataclass(frozen=True)
class WallLayout:
    wall_x: tuple[float, ...]
    gap_center_y: tuple[float, ...]
    gap_half_width: float = 0.07
    wall_thickness: float = 0.04

    def __post_init__(self):
        if len(self.wall_x) != len(self.gap_center_y):
            raise ValueError("one gap per wall")
        xs = list(self.wall_x)
        if any(not 0.1 < x < 0.9 for x in xs):
            raise ValueError(f"wall_x must lie in (0.1, 0.9): {xs}")
        if any(b - a <= self.wall_thickness for a, b in zip(xs, xs[1:])):
            raise ValueError(f"walls must be strictly increasing and non-overlapping: {xs}")
        for g in self.gap_center_y:
            if g - self.gap_half_width < 0 or g + self.gap_half_width > 1:
                raise ValueError(f"gap at y={g} leaves the arena")

    @property
    def num_walls(self) -> int:
        return len(self.wall_x)

    @cached_property
    def rects(self) -> np.ndarray:
        """Closed wall rectangles as rows of ``(xmin, xmax, ymin, ymax)``.

        Each wall contributes the slab below its gap and the slab above it.
        """
        h = self.wall_thickness / 2
        rows = []
        for wx, gy in zip(self.wall_x, self.gap_center_y):
            rows.append((wx - h, wx + h, 0.0, gy - self.gap_half_width))
            rows.append((wx - h, wx + h, gy + self.gap_half_width, 1.0))
        out = np.array(rows, dtype=float).reshape(-1, 4)
        out.setflags(write=False)
        return out

    def section_bounds(self) -> list[tuple[float, float]]:
        """Open x-intervals of the free sections between walls, left to right."""
        h = self.wall_thickness / 2
        edges = [0.0]
        for wx in self.wall_x:
            edges += [wx - h, wx + h]
        edges.append(1.0)
        return [(edges[i], edges[i + 1]) for i in range(0, len(edges), 2)]


@dataclass(frozen=True)
class MazeState:
    agent: tuple[float, float]
    goal: tuple[float, float]
    layout: WallLayout = field(repr=False)

    def with_agent(self, agent) -> "MazeState":
        return MazeState((float(agent[0]), float(agent[1])), self.goal, self.layout)


def free_space_mask(layout: WallLayout, pos: np.ndarray) -> np.ndarray:
    """Boolean mask of positions inside the arena and outside every wall."""
    pos = np.asarray(pos, dtype=float)
    x, y = pos[..., 0:1], pos[..., 1:2]
    r = layout.rects
    inside = (x >= r[:, 0]) & (x <= r[:, 1]) & (y >= r[:, 2]) & (y <= r[:, 3])
    in_arena = (pos >= 0).all(-1) & (pos <= 1).all(-1)
    return in_arena & ~inside.any(-1)


def is_free_space(layout: WallLayout, point) -> bool:
    return bool(free_space_mask(layout, np.asarray(point, dtype=float)[None])[0])


def project_to_free(layout: WallLayout, pos, margin: float = 0.0,
                    eps: float = DEFAULT_GEOMETRY.contact_eps) -> np.ndarray:
    """Snap positions to the nearest point at least ``margin`` from every wall.

    Walls are inflated axis-aligned by ``margin``; a position inside an inflated
    wall moves to the closest face projection (pushed out by ``eps``) that is in
    the arena and clear of all inflated walls. Clear positions are unchanged.
    """
    pos = np.asarray(pos, dtype=float)
    shape = pos.shape
    pos = pos.reshape(-1, 2)
    r = layout.rects + np.array([-margin, margin, -margin, margin])

    def blocked(p):
        x, y = p[..., 0:1], p[..., 1:2]
        return ((x >= r[:, 0]) & (x <= r[:, 1]) & (y >= r[:, 2]) & (y <= r[:, 3])).any(-1)

    bad = blocked(pos)
    if not bad.any():
        return pos.reshape(shape).copy()
    p = pos[bad]
    x = np.repeat(p[:, 0:1], len(r), 1)
    y = np.repeat(p[:, 1:2], len(r), 1)
    cands = np.stack([
        np.stack([np.broadcast_to(r[:, 0] - eps, x.shape), y], -1),
        np.stack([np.broadcast_to(r[:, 1] + eps, x.shape), y], -1),
        np.stack([x, np.broadcast_to(r[:, 2] - eps, y.shape)], -1),
        np.stack([x, np.broadcast_to(r[:, 3] + eps, y.shape)], -1),
    ], axis=1).reshape(len(p), -1, 2)
    ok = (cands >= 0).all(-1) & (cands <= 1).all(-1) & ~blocked(cands)
    dist = np.where(ok, np.linalg.norm(cands - p[:, None], axis=-1), np.inf)
    pick = dist.argmin(1)
    if np.isinf(dist[np.arange(len(p)), pick]).any():
        raise ValueError("no free position reachable by a single face projection")
    out = pos.copy()
    out[bad] = cands[np.arange(len(p)), pick]
    return out.reshape(shape)


def section_of(layout: WallLayout, x: float) -> int | None:
    """Index of the free section containing ``x``; None inside a wall slab."""
    for i, (lo, hi) in enumerate(layout.section_bounds()):
        if lo <= x <= hi:
            return i
    return None


def _rect_entry(pos, delta, rects):
    """Entry parameters of segments ``pos + s*delta`` into closed rectangles.

    Returns ``(t_enter, axis, hit)`` each of shape ``(N, R)``; ``axis`` is
    0 or 1 for the coordinate whose slab is entered last.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = []
        for ax in (0, 1):
            p = pos[:, ax : ax + 1]
            d = delta[:, ax : ax + 1]
            lo = rects[:, 2 * ax]
            hi = rects[:, 2 * ax + 1]
            t1 = (lo - p) / d
            t2 = (hi - p) / d
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            still = d == 0
            inside = (p >= lo) & (p <= hi)
            tmin = np.where(still, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(still, np.where(inside, np.inf, -np.inf), tmax)
            bounds.append((tmin, tmax))
    (txmin, txmax), (tymin, tymax) = bounds
    axis = (tymin > txmin).astype(np.int64)
    t_enter = np.maximum(txmin, tymin)
    t_exit = np.minimum(txmax, tymax)
    hit = (t_enter <= t_exit) & (t_exit >= 0) & (t_enter <= 1)
    return t_enter, axis, hit


@numba.njit(cache=True)
def _step_kernel(pos, delta, rects, a_max, eps, out):
    n = pos.shape[0]
    for i in range(n):
        px = pos[i, 0]
        py = pos[i, 1]
        dx = min(max(delta[i, 0], -a_max), a_max)
        dy = min(max(delta[i, 1], -a_max), a_max)
        t = 1.0
        if dx > 0:
            t = min(t, (1.0 - px) / dx)
        elif dx < 0:
            t = min(t, -px / dx)
        if dy > 0:
            t = min(t, (1.0 - py) / dy)
        elif dy < 0:
            t = min(t, -py / dy)
        t = max(t, 0.0)
        for r in range(rects.shape[0]):
            x0, x1, y0, y1 = rects[r, 0], rects[r, 1], rects[r, 2], rects[r, 3]
            if dx != 0:
                a = (x0 - px) / dx
                b = (x1 - px) / dx
                txmin, txmax = min(a, b), max(a, b)
            elif x0 <= px <= x1:
                txmin, txmax = -np.inf, np.inf
            else:
                continue
            if dy != 0:
                a = (y0 - py) / dy
                b = (y1 - py) / dy
                tymin, tymax = min(a, b), max(a, b)
            elif y0 <= py <= y1:
                tymin, tymax = -np.inf, np.inf
            else:
                continue
            if tymin > txmin:
                t_enter, d_axis = tymin, abs(dy)
            else:
                t_enter, d_axis = txmin, abs(dx)
            t_exit = min(txmax, tymax)
            if t_enter <= t_exit and t_exit >= 0 and t_enter <= 1:
                t = min(t, max(t_enter - eps / d_axis, 0.0))
        out[i, 0] = min(max(px + t * dx, 0.0), 1.0)
        out[i, 1] = min(max(py + t * dy, 0.0), 1.0)


def step_batch(layout: WallLayout, pos, delta, a_max: float = DEFAULT_GEOMETRY.a_max,
               contact_eps: float = DEFAULT_GEOMETRY.contact_eps) -> np.ndarray:
    """Move every position by its clipped delta, stopping short of walls.

    Motion is truncated at the first intersection with a wall (backed off by
    ``contact_eps`` along the entered face normal) or the arena boundary.
    """
    pos = np.ascontiguousarray(pos, dtype=float).reshape(-1, 2)
    delta = np.ascontiguousarray(delta, dtype=float).reshape(-1, 2)
    out = np.empty_like(pos)
    _step_kernel(pos, delta, np.ascontiguousarray(layout.rects), float(a_max), float(contact_eps), out)
    return out


def step(state: MazeState, action, geometry: Geometry = DEFAULT_GEOMETRY) -> MazeState:
    new = step_batch(state.layout, np.asarray(state.agent)[None], np.asarray(action)[None],
                     geometry.a_max, geometry.contact_eps)[0]
    return state.with_agent(new)


def is_success(state: MazeState, radius: float = DEFAULT_GEOMETRY.success_radius) -> bool:
    if radius <= 0:
        raise ValueError("radius must be positive")
    dx = state.agent[0] - state.goal[0]
    dy = state.agent[1] - state.goal[1]
    return bool(np.hypot(dx, dy) <= radius)


def gap_positions(layout: WallLayout) -> list[tuple[float, float]]:
    return [(float(x), float(y)) for x, y in zip(layout.wall_x, layout.gap_center_y)]


def segment_hits_wall(layout: WallLayout, a, b) -> bool:
    """True if the closed segment from ``a`` to ``b`` touches any wall."""
    a = np.asarray(a, dtype=float)[None]
    d = np.asarray(b, dtype=float)[None] - a
    _, _, hit = _rect_entry(a, d, layout.rects)
    return bool(hit.any())


def sample_scene(difficulty: Difficulty | str, rng: np.random.Generator,
                 geometry: Geometry = DEFAULT_GEOMETRY, max_tries: int = 10_000) -> MazeState:
    """Draw a random layout, goal (rightmost section) and agent start."""
    difficulty = Difficulty(difficulty)
    m = geometry.spawn_margin
    for _ in range(max_tries):
        wall_x = tuple(float(rng.uniform(lo, hi)) for lo, hi in geometry.wall_x_ranges)
        gaps = tuple(float(rng.uniform(*geometry.gap_center_range)) for _ in wall_x)
        try:
            layout = WallLayout(wall_x, gaps, geometry.gap_half_width, geometry.wall_thickness)
        except ValueError:
            continue
        sections = layout.section_bounds()
        a_lo, a_hi = sections[difficulty.spawn_section]
        g_lo, g_hi = sections[-1]
        agent = (float(rng.uniform(a_lo + m, a_hi - m)), float(rng.uniform(m, 1 - m)))
        goal = (float(rng.uniform(g_lo + m, g_hi - m)), float(rng.uniform(m, 1 - m)))
        state = MazeState(agent, goal, layout)
        if not (is_free_space(layout, agent) and is_free_space(layout, goal)):
            continue
        if difficulty is Difficulty.HARD and not segment_hits_wall(layout, agent, goal):
            continue
        return state
    raise RuntimeError(
        f"no valid {difficulty.value} scene after {max_tries} draws; check geometry config")
