"""Visual MPC: CEM over action sequences scored by last-frame pixel cost."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import maze_env
from .cem import CemConfig, cem_minimize_many
from .dynamics import DynamicsModel
from .maze_env import MazeState, WallLayout
from .raster import BlobCost, pixel_cost, plateau_cost, render, render_static

__all__ = ["MpcConfig", "PlanResult", "plan", "plan_batch", "act", "default_stop_threshold"]


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 5
    num_samples: int = 200
    num_elites: int = 40
    max_iters: int = 5
    std_threshold: float = 1e-3
    std_floor: float = 1e-6
    cost_mode: str = "last_frame"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.cost_mode != "last_frame":
            raise ValueError(f"unsupported cost_mode {self.cost_mode!r}")
        self.cem  # validates sample/elite counts

    @property
    def cem(self) -> CemConfig:
        return CemConfig(self.num_samples, self.num_elites, self.max_iters,
                         self.std_threshold, self.std_floor)

    def with_(self, **kw) -> "MpcConfig":
        return replace(self, **kw)


@dataclass
class PlanResult:
    actions: np.ndarray  # (H, 2)
    predicted_cost: float


def default_stop_threshold(model: DynamicsModel) -> float:
    """A quarter of the disjoint-blob plateau: blobs overlap by at least 75%."""
    return 0.25 * plateau_cost(model.raster)


def plan_batch(model: DynamicsModel, layout: WallLayout, starts: np.ndarray,
               score: Callable[[np.ndarray, np.ndarray], np.ndarray], config: MpcConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Plan P problems that share a layout.

    ``score(final_positions, problems)`` maps predicted final agent positions of
    shape ``(P', N, 2)`` for the listed problems to costs ``(P', N)``. The
    zero-action sequence is included as the last sample of the first batch.
    Returns clipped actions ``(P, H, 2)`` and best costs ``(P,)`` in score units.
    """
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    P, H, N = len(starts), config.horizon, config.num_samples
    a_max = model.geometry.a_max

    def to_actions(u):
        return np.clip(u * a_max, -a_max, a_max).reshape(u.shape[:-1] + (H, 2))

    def objective(u, idx):
        acts = to_actions(u).reshape(-1, H, 2)
        s = np.repeat(starts[idx], N, axis=0)
        final = model.predict_positions(layout, s, acts)[:, -1].reshape(len(idx), N, 2)
        return score(final, idx)

    res = cem_minimize_many(objective, P, 2 * H, config.cem, rng, forced=np.zeros((1, 2 * H)))
    return to_actions(res.best_vectors), res.best_costs


def plan(model: DynamicsModel, start: MazeState, goal: np.ndarray, config: MpcConfig,
         rng: np.random.Generator) -> PlanResult:
    """Best H-step action sequence from ``start`` toward the ``goal`` frame."""
    static = render_static(start.layout, start.goal, model.raster)
    if np.shape(goal) != static.shape:
        raise ValueError(f"goal frame shape {np.shape(goal)} does not match model frames {static.shape}")
    cost = BlobCost(static, np.asarray(goal, dtype=float), model.raster)
    actions, best = plan_batch(model, start.layout, np.asarray(start.agent)[None],
                               lambda pos, _idx: cost.raw(pos), config, rng)
    return PlanResult(actions[0], float(best[0] / cost.scale))


def act(model: DynamicsModel, env_state: MazeState, goal: np.ndarray, max_steps: int,
        stop_threshold: float | None = None, config: MpcConfig = MpcConfig(),
        rng: np.random.Generator | None = None, *, done: Callable[[MazeState], bool] | None = None,
        geometry: maze_env.Geometry | None = None) -> tuple[list[MazeState], bool]:
    """Receding-horizon execution in the true environment.

    Replans from the current state every step and applies only the first
    action. Stops once ``done(state)`` holds (when given) or the pixel cost to
    ``goal`` drops below ``stop_threshold``, or after ``max_steps`` steps.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    geometry = model.geometry if geometry is None else geometry
    if done is None:
        thr = default_stop_threshold(model) if stop_threshold is None else stop_threshold

        def done(s):
            return pixel_cost(render(s, model.raster), goal) < thr

    state = env_state
    trajectory = [state]
    for _ in range(max_steps):
        if done(state):
            return trajectory, True
        result = plan(model, state, goal, config, rng)
        state = maze_env.step(state, result.actions[0], geometry)
        trajectory.append(state)
    return trajectory, bool(done(state))
