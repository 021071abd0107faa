"""Frame-predicting dynamics models.

A dynamics model maps a start state and an action sequence to the predicted
frames that follow. Both implementations here predict agent positions and
re-render them over the start's static scene, so the planner only ever sees
frames. ``OracleDynamics`` steps the true simulator; ``SurrogateDynamics`` is
a k-nearest-neighbour displacement regressor fit on random interaction data.
"""

from __future__ import annotations

import abc
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .maze_env import (DEFAULT_GEOMETRY, Geometry, MazeState, WallLayout, project_to_free,
                       step_batch)
from .raster import DEFAULT_RASTER, RasterConfig, render_agent, render_static

__all__ = [
    "DynamicsModel",
    "OracleDynamics",
    "SurrogateDynamics",
    "SurrogateModel",
    "InteractionDataset",
    "fit_surrogate",
    "rollout_oracle",
    "rollout_surrogate",
    "geometry_hash",
]

MAX_ROLLOUT = 64


def geometry_hash(geometry: Geometry) -> str:
    blob = json.dumps(asdict(geometry), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class DynamicsModel(abc.ABC):
    """Predicts future frames from a start state and an action sequence."""

    def __init__(self, geometry: Geometry = DEFAULT_GEOMETRY, raster: RasterConfig = DEFAULT_RASTER):
        self.geometry = geometry
        self.raster = raster

    @abc.abstractmethod
    def predict_positions(self, layout: WallLayout, starts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Agent positions after each action.

        ``starts`` is ``(B, 2)``, ``actions`` is ``(B, H, 2)``; returns ``(B, H, 2)``.
        """

    def rollout(self, state: MazeState, actions) -> list[np.ndarray]:
        actions = np.asarray(actions, dtype=float).reshape(-1, 2)
        if not 1 <= len(actions) <= MAX_ROLLOUT:
            raise ValueError(f"rollout length must be in [1, {MAX_ROLLOUT}], got {len(actions)}")
        pos = self.predict_positions(state.layout, np.asarray(state.agent, dtype=float)[None], actions[None])[0]
        static = render_static(state.layout, state.goal, self.raster)
        return [render_agent(static, p, self.raster) for p in pos]


class OracleDynamics(DynamicsModel):
    """Exact simulator rollouts."""

    def predict_positions(self, layout, starts, actions):
        starts = np.asarray(starts, dtype=float)
        actions = np.asarray(actions, dtype=float)
        out = np.empty(actions.shape)
        pos = starts
        for t in range(actions.shape[1]):
            pos = step_batch(layout, pos, actions[:, t], self.geometry.a_max, self.geometry.contact_eps)
            out[:, t] = pos
        return out


def rollout_oracle(state: MazeState, actions, geometry: Geometry = DEFAULT_GEOMETRY,
                   raster: RasterConfig = DEFAULT_RASTER) -> list[np.ndarray]:
    return OracleDynamics(geometry, raster).rollout(state, actions)


# --------------------------------------------------------------------------
# interaction data


@dataclass
class InteractionDataset:
    """Random-policy episodes stored as simulator states.

    Frames are not stored; ``frames(e)`` re-renders them deterministically.
    """

    wall_x: np.ndarray  # (E, W)
    gap_y: np.ndarray  # (E, W)
    goals: np.ndarray  # (E, 2)
    positions: np.ndarray  # (E, T+1, 2)
    actions: np.ndarray  # (E, T, 2)
    geometry: Geometry = DEFAULT_GEOMETRY
    seed: int | None = None

    @property
    def num_episodes(self) -> int:
        return len(self.actions)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def num_transitions(self) -> int:
        return int(self.actions.shape[0] * self.actions.shape[1])

    def layout(self, e: int) -> WallLayout:
        g = self.geometry
        return WallLayout(tuple(map(float, self.wall_x[e])), tuple(map(float, self.gap_y[e])),
                          g.gap_half_width, g.wall_thickness)

    def state(self, e: int, t: int) -> MazeState:
        return MazeState(tuple(map(float, self.positions[e, t])), tuple(map(float, self.goals[e])),
                         self.layout(e))

    def frames(self, e: int, raster: RasterConfig = DEFAULT_RASTER) -> list[np.ndarray]:
        static = render_static(self.layout(e), self.goals[e], raster)
        return [render_agent(static, p, raster) for p in self.positions[e]]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.wall_x, self.gap_y, self.goals, self.positions, self.actions):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "format": "hvf-interaction-v1",
            "seed": self.seed,
            "episodes": self.num_episodes,
            "horizon": self.horizon,
            "transitions": self.num_transitions,
            "geometry": asdict(self.geometry),
            "geometry_hash": geometry_hash(self.geometry),
            "content_sha256": self.content_hash(),
        }

    def save(self, directory) -> tuple[str, str]:
        """Write ``transitions.npz`` plus ``manifest.json``; returns both paths."""
        os.makedirs(directory, exist_ok=True)
        rec = os.path.join(directory, "transitions.npz")
        man = os.path.join(directory, "manifest.json")
        try:
            with open(rec, "wb") as fh:
                np.savez(fh, wall_x=self.wall_x, gap_y=self.gap_y, goals=self.goals,
                         positions=self.positions, actions=self.actions)
            manifest = dict(self.manifest(), records="transitions.npz")
            with open(man, "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise OSError(f"failed writing dataset to {directory}: {exc}") from exc
        return rec, man

    @classmethod
    def load(cls, directory) -> "InteractionDataset":
        man = os.path.join(directory, "manifest.json")
        try:
            with open(man) as fh:
                manifest = json.load(fh)
            with np.load(os.path.join(directory, manifest["records"])) as z:
                arrays = {k: z[k] for k in ("wall_x", "gap_y", "goals", "positions", "actions")}
        except (OSError, KeyError) as exc:
            raise OSError(f"failed reading dataset from {directory}: {exc}") from exc
        geo = manifest["geometry"]
        geometry = Geometry(**{k: tuple(map(tuple, v)) if k == "wall_x_ranges" else
                               tuple(v) if isinstance(v, list) else v for k, v in geo.items()})
        ds = cls(geometry=geometry, seed=manifest.get("seed"), **arrays)
        if ds.content_hash() != manifest["content_sha256"]:
            raise ValueError(f"{directory}: record content does not match manifest hash")
        return ds


# --------------------------------------------------------------------------
# k-NN surrogate


def _features(layout_wall_x, layout_gap_y, gap_half_width, a_max, pos, act):
    """Wall-relative, gap-mirrored features and the mirror sign.

    Collision outcomes depend on the offset to the nearest wall and on the
    distance past the gap edge, not on absolute position, so transitions from
    different layouts pool together. ``y`` is mirrored about the gap center.
    """
    wall_x = np.asarray(layout_wall_x, dtype=float)
    gap_y = np.asarray(layout_gap_y, dtype=float)
    if wall_x.ndim == 1:
        wall_x = np.broadcast_to(wall_x, (len(pos), wall_x.size))
        gap_y = np.broadcast_to(gap_y, (len(pos), gap_y.size))
    j = np.abs(pos[:, 0:1] - wall_x).argmin(1)
    rows = np.arange(len(pos))
    du = pos[:, 0] - wall_x[rows, j]
    dv = pos[:, 1] - gap_y[rows, j]
    sign = np.where(dv < 0, -1.0, 1.0)
    feats = np.stack([
        np.clip(du / a_max, -3, 3),
        np.clip((np.abs(dv) - gap_half_width) / a_max, -3, 3),
        act[:, 0] / a_max,
        sign * act[:, 1] / a_max,
    ], axis=1)
    return feats, sign


@dataclass
class SurrogateModel:
    """k-NN regressor from wall-relative (position, action) to displacement.

    The regression target is the collision residual ``displacement - action``,
    which is exactly zero for unobstructed moves, so free-space motion is
    reproduced without averaging error. A zero action predicts no motion.
    """

    tree: cKDTree = field(repr=False)
    targets: np.ndarray = field(repr=False)  # (N, 2) mirrored residuals
    k: int
    geometry: Geometry
    holdout_error: float
    dataset_ref: str | None = None
    holdout_fraction: float = 0.1

    def predict_displacement(self, layout: WallLayout, pos, act) -> np.ndarray:
        pos = np.asarray(pos, dtype=float).reshape(-1, 2)
        act = np.clip(np.asarray(act, dtype=float).reshape(-1, 2), -self.geometry.a_max, self.geometry.a_max)
        feats, sign = _features(layout.wall_x, layout.gap_center_y, self.geometry.gap_half_width,
                                self.geometry.a_max, pos, act)
        return self._displacement(feats, sign, act)

    def _displacement(self, feats, sign, act):
        disp = act + self._predict(feats) * np.stack([np.ones_like(sign), sign], 1)
        disp[(act == 0).all(1)] = 0.0
        return disp

    def _predict(self, feats):
        k = min(self.k, len(self.targets))
        dist, idx = self.tree.query(feats, k=k)
        dist = dist.reshape(len(feats), k)
        idx = idx.reshape(len(feats), k)
        exact = dist == 0
        with np.errstate(divide="ignore"):
            w = np.where(exact.any(1, keepdims=True), exact.astype(float), 1.0 / dist)
        w /= w.sum(1, keepdims=True)
        return np.einsum("nk,nkd->nd", w, self.targets[idx])

    def step(self, layout: WallLayout, pos, act) -> np.ndarray:
        nxt = np.clip(np.asarray(pos, dtype=float).reshape(-1, 2) + self.predict_displacement(layout, pos, act),
                      0.0, 1.0)
        return project_to_free(layout, nxt, 0.0, self.geometry.contact_eps)

    def to_json(self) -> dict:
        return {"dataset": self.dataset_ref, "k": self.k, "holdout_fraction": self.holdout_fraction,
                "holdout_error": self.holdout_error, "geometry_hash": geometry_hash(self.geometry)}


def fit_surrogate(data: InteractionDataset, k: int = 8, holdout_fraction: float = 0.1,
                  min_transitions: int = 1000, dataset_ref: str | None = None) -> SurrogateModel:
    """Fit the k-NN displacement model; the last episodes are held out for error reporting."""
    if data.num_transitions == 0:
        raise ValueError("empty dataset")
    if data.num_transitions < min_transitions:
        raise ValueError(f"need at least {min_transitions} transitions, got {data.num_transitions}")
    if k < 1:
        raise ValueError("k must be >= 1")
    g = data.geometry
    E, T = data.actions.shape[:2]
    n_hold = int(round(E * holdout_fraction)) if E > 1 else 0
    n_train = E - n_hold

    def flat(sl):
        pos = data.positions[sl, :-1].reshape(-1, 2)
        nxt = data.positions[sl, 1:].reshape(-1, 2)
        act = data.actions[sl].reshape(-1, 2)
        wx = np.repeat(data.wall_x[sl], T, axis=0)
        gy = np.repeat(data.gap_y[sl], T, axis=0)
        act = np.clip(act, -g.a_max, g.a_max)
        feats, sign = _features(wx, gy, g.gap_half_width, g.a_max, pos, act)
        disp = nxt - pos
        return feats, sign, act, disp

    feats, sign, act, disp = flat(slice(0, n_train))
    targets = (disp - act) * np.stack([np.ones_like(sign), sign], 1)
    model = SurrogateModel(cKDTree(feats), targets, k, g, float("nan"), dataset_ref, holdout_fraction)
    if n_hold:
        hfeats, hsign, hact, hdisp = flat(slice(n_train, E))
        pred = model._displacement(hfeats, hsign, hact)
        model.holdout_error = float(np.linalg.norm(pred - hdisp, axis=1).mean())
    return model


class SurrogateDynamics(DynamicsModel):
    """Iterated surrogate predictions, re-rendered with the start's layout."""

    def __init__(self, model: SurrogateModel, raster: RasterConfig = DEFAULT_RASTER):
        super().__init__(model.geometry, raster)
        self.model = model

    def predict_positions(self, layout, starts, actions):
        actions = np.asarray(actions, dtype=float)
        out = np.empty(actions.shape)
        pos = np.asarray(starts, dtype=float)
        for t in range(actions.shape[1]):
            pos = self.model.step(layout, pos, actions[:, t])
            out[:, t] = pos
        return out


def rollout_surrogate(model: SurrogateModel, state: MazeState, actions,
                      raster: RasterConfig = DEFAULT_RASTER) -> list[np.ndarray]:
    return SurrogateDynamics(model, raster).rollout(state, actions)
