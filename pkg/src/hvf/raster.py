"""Top-down renderer and pixel-space cost.

Frames are ``(R, R, 3)`` float arrays with intensities in [0, 1], row 0 at the
top of the arena (y = 1). Rasterization is nearest-pixel with no
anti-aliasing: a pixel takes a wall color iff its center lies in the wall, and
square markers cover ``side`` whole pixels around the rounded center,
shifted inward at the image border.

Every renderable frame is ``static scene + agent blob``. ``BlobCost`` exploits
that to score many candidate agent positions against one goal frame with a
summed-area table instead of rendering each candidate.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .maze_env import MazeState, WallLayout

__all__ = [
    "RasterConfig",
    "render",
    "render_static",
    "render_agent",
    "blob_bounds",
    "pixel_cost",
    "plateau_cost",
    "BlobCost",
    "write_ppm",
    "read_ppm",
]

BACKGROUND = (0.1, 0.1, 0.1)
WALL = (1.0, 1.0, 1.0)
GOAL = (1.0, 0.0, 0.0)
AGENT = (0.0, 1.0, 0.0)

# all palette values are multiples of 0.1, so costs can be summed exactly in
# integer units of 0.01
_LATTICE = 10


@dataclass(frozen=True)
class RasterConfig:
    resolution: int = 32
    blob_px: int | None = None
    goal_marker_px: int = 4
    render_goal_marker: bool = True

    def __post_init__(self):
        if self.resolution not in (32, 64):
            raise ValueError(f"resolution must be 32 or 64, got {self.resolution}")
        if self.blob_px is None:
            object.__setattr__(self, "blob_px", 4 if self.resolution == 32 else 6)

    @property
    def blob_half_extent(self) -> float:
        """Half the blob side in arena units."""
        return self.blob_px / (2 * self.resolution)


DEFAULT_RASTER = RasterConfig()


def blob_bounds(pos, side: int, resolution: int) -> np.ndarray:
    """Pixel rectangles ``(r0, r1, c0, c1)`` (half-open) of square markers.

    ``pos`` is ``(..., 2)``; the result is an int array of shape ``(..., 4)``.
    Markers near the border are shifted inward rather than cropped, so every
    marker covers exactly ``side**2`` pixels. Cropping would make border
    positions cheaper under the pixel cost and planners would seek corners.
    """
    pos = np.asarray(pos, dtype=float)
    c0 = np.floor(pos[..., 0] * resolution - side / 2 + 0.5).astype(np.int64)
    r0 = np.floor((1.0 - pos[..., 1]) * resolution - side / 2 + 0.5).astype(np.int64)
    c0 = np.clip(c0, 0, resolution - side)
    r0 = np.clip(r0, 0, resolution - side)
    return np.stack([r0, r0 + side, c0, c0 + side], axis=-1)


def render_static(layout: WallLayout, goal, config: RasterConfig = DEFAULT_RASTER) -> np.ndarray:
    """Background, walls and goal marker; everything but the agent."""
    R = config.resolution
    frame = np.empty((R, R, 3))
    frame[:] = BACKGROUND
    centers = (np.arange(R) + 0.5) / R
    xs = centers[None, :]
    ys = 1.0 - centers[:, None]
    for x0, x1, y0, y1 in layout.rects:
        mask = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        frame[mask] = WALL
    if config.render_goal_marker:
        r0, r1, c0, c1 = blob_bounds(goal, config.goal_marker_px, R)
        frame[r0:r1, c0:c1] = GOAL
    return frame


def render_agent(static: np.ndarray, pos, config: RasterConfig = DEFAULT_RASTER) -> np.ndarray:
    frame = static.copy()
    r0, r1, c0, c1 = blob_bounds(pos, config.blob_px, config.resolution)
    frame[r0:r1, c0:c1] = AGENT
    return frame


def render(state: MazeState, config: RasterConfig = DEFAULT_RASTER) -> np.ndarray:
    """Rasterize a maze state to an ``(R, R, 3)`` frame."""
    return render_agent(render_static(state.layout, state.goal, config), state.agent, config)


def pixel_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Squared l2 distance summed over pixels and channels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def plateau_cost(config: RasterConfig = DEFAULT_RASTER) -> float:
    """Cost between two frames whose blobs sit on disjoint background pixels."""
    per_pixel = sum((g - b) ** 2 for g, b in zip(AGENT, BACKGROUND))
    return 2 * config.blob_px**2 * per_pixel


def _summed_area(w: np.ndarray) -> np.ndarray:
    out = np.zeros((w.shape[0] + 1, w.shape[1] + 1), dtype=w.dtype)
    out[1:, 1:] = w.cumsum(0).cumsum(1)
    return out


def _on_lattice(*frames) -> bool:
    return all(np.allclose(f * _LATTICE, np.round(f * _LATTICE), rtol=0, atol=1e-9) for f in frames)


def _box_sum(table: np.ndarray, rect: np.ndarray) -> np.ndarray:
    r0, r1, c0, c1 = (rect[..., i] for i in range(4))
    return table[r1, c1] - table[r0, c1] - table[r1, c0] + table[r0, c0]


class BlobCost:
    """``pixel_cost(render_agent(static, p), goal)`` for batches of positions ``p``.

    Pixels outside the candidate blob contribute the fixed ``sum((static-goal)^2)``;
    inside the blob each pixel's term is swapped for ``(agent-goal)^2``. With a
    summed-area table of that swap, each candidate costs four lookups.

    Frames on the 0.1 palette lattice are scored in exact integer arithmetic so
    identical frames give exactly zero and the batched and per-frame planners
    agree bitwise.
    """

    def __init__(self, static: np.ndarray, goal: np.ndarray, config: RasterConfig = DEFAULT_RASTER):
        if static.shape != goal.shape:
            raise ValueError(f"frame shapes differ: {static.shape} vs {goal.shape}")
        self.config = config
        agent = np.asarray(AGENT)
        if _on_lattice(static, goal):
            s = np.round(static * _LATTICE).astype(np.int64)
            g = np.round(goal * _LATTICE).astype(np.int64)
            a = np.round(agent * _LATTICE).astype(np.int64)
            self.scale = float(_LATTICE**2)
        else:
            s, g, a = static, goal, agent
            self.scale = 1.0
        base = ((s - g) ** 2).sum(-1)
        swap = ((a - g) ** 2).sum(-1) - base
        self.offset = base.sum()
        self.table = _summed_area(swap)

    def raw(self, pos) -> np.ndarray:
        rect = blob_bounds(pos, self.config.blob_px, self.config.resolution)
        return self.offset + _box_sum(self.table, rect)

    def __call__(self, pos) -> np.ndarray:
        return self.raw(pos) / self.scale


class SceneBlobCost:
    """Costs between agent-blob renderings of one static scene.

    ``cost(p, q) == pixel_cost(render_agent(S, p), render_agent(S, q))`` computed
    as ``W(A) + W(B) - 2 W(A & B)`` where ``W`` sums the per-pixel weight
    ``|agent - S|^2`` over a blob rectangle. Used when both the candidate and the
    target are renderings of the same scene (subgoal search).
    """

    def __init__(self, static: np.ndarray, config: RasterConfig = DEFAULT_RASTER):
        self.config = config
        if _on_lattice(static):
            s = np.round(static * _LATTICE).astype(np.int64)
            a = np.round(np.asarray(AGENT) * _LATTICE).astype(np.int64)
            self.scale = float(_LATTICE**2)
        else:
            s, a = static, np.asarray(AGENT)
            self.scale = 1.0
        self.table = _summed_area(((a - s) ** 2).sum(-1))

    def rects(self, pos) -> np.ndarray:
        return blob_bounds(pos, self.config.blob_px, self.config.resolution)

    def raw(self, rect_a: np.ndarray, rect_b: np.ndarray) -> np.ndarray:
        lo = np.maximum(rect_a, rect_b)
        hi = np.minimum(rect_a, rect_b)
        inter = np.stack([lo[..., 0], np.maximum(hi[..., 1], lo[..., 0]),
                          lo[..., 2], np.maximum(hi[..., 3], lo[..., 2])], axis=-1)
        return _box_sum(self.table, rect_a) + _box_sum(self.table, rect_b) - 2 * _box_sum(self.table, inter)

    def __call__(self, pos_a, pos_b) -> np.ndarray:
        return self.raw(self.rects(pos_a), self.rects(pos_b)) / self.scale


def write_ppm(path, frame: np.ndarray) -> None:
    """Write a frame as a binary (P6) portable pixmap."""
    data = np.clip(np.round(np.asarray(frame) * 255), 0, 255).astype(np.uint8)
    h, w, _ = data.shape
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pixels = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3)
    return pixels.reshape(h, w, 3).astype(float) / maxval
