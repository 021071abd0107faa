"""Scene-conditioned subgoal decoder.

``FreeSpaceDecoder`` turns a latent vector into an imagined frame of the
conditioning scene with the agent moved: the first two latent coordinates are
squashed through the logistic function to an arena position, which is then
snapped clear of the walls by the blob half-extent. The remaining coordinates
are inert; they keep the subgoal search at its full ``K * L`` dimension.
"""

from __future__ import annotations

import abc

import numpy as np
from scipy.special import expit, logit

from .maze_env import MazeState, WallLayout, project_to_free
from .raster import DEFAULT_RASTER, RasterConfig, render, render_agent, render_static

__all__ = ["GenerativeModel", "FreeSpaceDecoder", "latent_dim"]


class GenerativeModel(abc.ABC):
    latent_dim: int
    raster: RasterConfig

    @abc.abstractmethod
    def decode_positions(self, z: np.ndarray, layout: WallLayout) -> np.ndarray:
        """Agent positions for latents ``z`` of shape ``(..., L)``."""

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent must have length {self.latent_dim}, got {z.shape[-1]}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent must be finite")
        return z

    def decode_state(self, z, cond: MazeState) -> MazeState:
        return cond.with_agent(self.decode_positions(self._check(z), cond.layout))

    def decode(self, z, cond: MazeState) -> np.ndarray:
        """Imagined frame: the conditioning scene with the agent placed by ``z``."""
        return render(self.decode_state(z, cond), self.raster)

    def decode_many(self, z, cond: MazeState) -> np.ndarray:
        z = self._check(z)
        pos = self.decode_positions(z, cond.layout).reshape(-1, 2)
        static = render_static(cond.layout, cond.goal, self.raster)
        frames = np.stack([render_agent(static, p, self.raster) for p in pos])
        return frames.reshape(z.shape[:-1] + frames.shape[1:])


class FreeSpaceDecoder(GenerativeModel):
    def __init__(self, latent_dim: int = 8, raster: RasterConfig = DEFAULT_RASTER,
                 margin: float | None = None):
        if latent_dim < 2:
            raise ValueError("latent_dim must be >= 2 (two coordinates carry the position)")
        self.latent_dim = latent_dim
        self.raster = raster
        self.margin = raster.blob_half_extent if margin is None else margin

    def decode_positions(self, z, layout):
        z = self._check(z)
        xy = expit(z[..., :2])
        return project_to_free(layout, xy, self.margin)

    def encode_position(self, pos) -> np.ndarray:
        """A latent whose position coordinates decode (before projection) to ``pos``."""
        pos = np.clip(np.asarray(pos, dtype=float), 1e-9, 1 - 1e-9)
        z = np.zeros(pos.shape[:-1] + (self.latent_dim,))
        z[..., :2] = logit(pos)
        return z


def latent_dim(model: GenerativeModel) -> int:
    return model.latent_dim
