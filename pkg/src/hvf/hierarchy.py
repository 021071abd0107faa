"""Subgoal optimization by nested CEM and subgoal-conditioned execution.

The outer CEM searches the concatenation of K decoder latents. A sample is
scored by planning every segment ``s0 -> g1 -> ... -> gK -> goal`` with the
inner visual MPC and aggregating the predicted segment costs (worst segment by
default). All ``M * (K+1)`` inner planning problems of an outer iteration are
solved in one batched CEM run.

Inner planning uses common random numbers: every segment problem is solved
with the same noise stream, seeded once per subgoal search. The outer
objective is therefore a deterministic function of the latents, and
re-scoring the winning latents with the stored seed reproduces its cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import maze_env
from .cem import CemConfig, cem_minimize_many
from .dynamics import DynamicsModel
from .generative import GenerativeModel
from .maze_env import MazeState
from .mpc import MpcConfig, act, default_stop_threshold, plan_batch
from .raster import BlobCost, SceneBlobCost, render, render_static

__all__ = [
    "HvfConfig",
    "SubgoalPlan",
    "EpisodeResult",
    "aggregate",
    "segment_costs",
    "segment_costs_batch",
    "optimize_subgoals",
    "oracle_subgoal_positions",
    "oracle_plan",
    "execute_plan",
    "run_hvf_episode",
]

AGGREGATE_MODES = ("max", "mean")


@dataclass(frozen=True)
class HvfConfig:
    num_subgoals: int = 2
    outer: CemConfig = CemConfig(num_samples=200, num_elites=40, max_iters=5, std_threshold=1e-3)
    aggregate_mode: str = "max"
    # reduced inner planner used while scoring subgoal candidates
    search_mpc: MpcConfig = MpcConfig(num_samples=64, num_elites=13, max_iters=2)
    exec_mpc: MpcConfig = MpcConfig()
    subgoal_steps: int = 10
    total_steps: int = 50
    stop_threshold: float | None = None
    include_start_latents: bool = True
    include_oracle_latents: bool = False

    def __post_init__(self):
        if self.num_subgoals < 0:
            raise ValueError("num_subgoals must be >= 0")
        if self.aggregate_mode not in AGGREGATE_MODES:
            raise ValueError(f"aggregate_mode must be one of {AGGREGATE_MODES}")
        if self.subgoal_steps < 1 or self.total_steps < self.subgoal_steps:
            raise ValueError("need 1 <= subgoal_steps <= total_steps")
        if self.search_mpc.horizon != self.exec_mpc.horizon:
            raise ValueError("search and execution planners must share a horizon")

    def with_(self, **kw) -> "HvfConfig":
        return replace(self, **kw)


@dataclass
class SubgoalPlan:
    subgoals: list[np.ndarray]
    positions: np.ndarray  # (K, 2)
    latents: np.ndarray  # (K*L,)
    optimized_cost: float | None
    segment_costs: list[float] = field(default_factory=list)
    inner_seed: int | None = None
    iterations: int = 0
    cost_history: list[float] = field(default_factory=list)

    @property
    def num_subgoals(self) -> int:
        return len(self.subgoals)


@dataclass
class EpisodeResult:
    success: bool
    trajectory: list[MazeState]
    plan: SubgoalPlan
    phase_steps: list[int]

    @property
    def steps(self) -> int:
        return len(self.trajectory) - 1


def aggregate(costs, mode: str = "max") -> float:
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("cannot aggregate an empty cost list")
    if mode == "max":
        return float(costs.max())
    if mode == "mean":
        return float(costs.mean())
    raise ValueError(f"unknown aggregate mode {mode!r}")


def _aggregate_rows(costs: np.ndarray, mode: str) -> np.ndarray:
    return costs.max(axis=1) if mode == "max" else costs.mean(axis=1)


def segment_costs_batch(model: DynamicsModel, gen: GenerativeModel, s0: MazeState, goal: np.ndarray,
                        z: np.ndarray, num_subgoals: int, inner: MpcConfig, inner_seed: int) -> np.ndarray:
    """Predicted planning cost of every segment for a batch of latent vectors.

    ``z`` is ``(N, K*L)``; returns ``(N, K+1)``. Segment starts after the first
    are the decoded subgoal states.
    """
    K, L = num_subgoals, gen.latent_dim
    z = np.asarray(z, dtype=float)
    z = z.reshape(-1, K * L) if K else z.reshape(max(len(z), 1), 0)
    n = len(z)
    layout = s0.layout
    start = np.asarray(s0.agent, dtype=float)
    sub = gen.decode_positions(z.reshape(n, K, L), layout).reshape(n, K, 2)
    starts = np.concatenate([np.broadcast_to(start, (n, 1, 2)), sub], axis=1).reshape(-1, 2)

    static = render_static(layout, s0.goal, model.raster)
    goal_cost = BlobCost(static, np.asarray(goal, dtype=float), model.raster)
    scene_cost = SceneBlobCost(static, model.raster)
    target_rects = scene_cost.rects(sub).reshape(n * K, 4) if K else np.zeros((0, 4), np.int64)
    seg = np.tile(np.arange(K + 1), n)
    sample = np.repeat(np.arange(n), K + 1)

    def score(final, idx):
        out = np.empty(final.shape[:2])
        last = seg[idx] == K
        if last.any():
            out[last] = goal_cost.raw(final[last]) / goal_cost.scale
        mid = ~last
        if mid.any():
            rect_t = target_rects[sample[idx[mid]] * K + seg[idx[mid]]]
            out[mid] = scene_cost.raw(scene_cost.rects(final[mid]), rect_t[:, None, :]) / scene_cost.scale
        return out

    _, best = plan_batch(model, layout, starts, score, inner, np.random.default_rng(inner_seed))
    return best.reshape(n, K + 1)


def segment_costs(model: DynamicsModel, gen: GenerativeModel, s0: MazeState, goal: np.ndarray,
                  z, inner: MpcConfig, rng: np.random.Generator) -> list[float]:
    """Per-segment planning costs ``[C(s0,g1), ..., C(gK,goal)]`` for one latent vector.

    The inner noise seed is the first draw from ``rng``, exactly as in
    ``optimize_subgoals``; a fresh generator with the search's seed therefore
    re-scores the winning latents to the stored cost.
    """
    z = np.asarray(z, dtype=float).ravel()
    L = gen.latent_dim
    if z.size % L:
        raise ValueError(f"latent vector length {z.size} is not a multiple of L={L}")
    seed = int(rng.integers(2**63))
    return [float(c) for c in segment_costs_batch(model, gen, s0, goal, z[None], z.size // L, inner, seed)[0]]


def oracle_subgoal_positions(scene: MazeState) -> np.ndarray:
    """Hand-specified bottleneck subgoals.

    Gap centers of the walls still to cross, left to right; a start already in
    the goal's section gets the midpoint between start and goal.
    """
    ax = scene.agent[0]
    gaps = [g for g in maze_env.gap_positions(scene.layout) if g[0] > ax]
    if not gaps:
        gaps = [((scene.agent[0] + scene.goal[0]) / 2, (scene.agent[1] + scene.goal[1]) / 2)]
    return np.array(gaps, dtype=float)


def _make_plan(model, gen, s0, goal, latents, K, config, inner_seed, iterations=0, history=()):
    L = gen.latent_dim
    latents = np.asarray(latents, dtype=float).reshape(K * L)
    costs = segment_costs_batch(model, gen, s0, goal, latents[None], K, config.search_mpc, inner_seed)[0]
    pos = gen.decode_positions(latents.reshape(K, L), s0.layout)
    frames = [render(s0.with_agent(p), gen.raster) for p in pos]
    return SubgoalPlan(frames, pos, latents, aggregate(costs, config.aggregate_mode),
                       [float(c) for c in costs], inner_seed, iterations, list(history))


def optimize_subgoals(model: DynamicsModel, gen: GenerativeModel, s0: MazeState, goal: np.ndarray,
                      config: HvfConfig, rng: np.random.Generator) -> SubgoalPlan:
    """Search K subgoal latents minimizing the aggregated segment planning cost."""
    K, L = config.num_subgoals, gen.latent_dim
    if K == 0:
        return SubgoalPlan([], np.zeros((0, 2)), np.zeros(0), None)
    inner_seed = int(rng.integers(2**63))

    forced = []
    if config.include_start_latents:
        forced.append(np.tile(gen.encode_position(s0.agent), K))
    if config.include_oracle_latents:
        oracle = oracle_subgoal_positions(s0)
        if len(oracle) == K:
            forced.append(gen.encode_position(oracle).ravel())
    forced = np.array(forced).reshape(-1, K * L)

    def objective(x, _idx):
        costs = segment_costs_batch(model, gen, s0, goal, x[0], K, config.search_mpc, inner_seed)
        return _aggregate_rows(costs, config.aggregate_mode)[None]

    res = cem_minimize_many(objective, 1, K * L, config.outer, rng, forced=forced if len(forced) else None)
    n = int(res.iterations[0])
    plan = _make_plan(model, gen, s0, goal, res.best_vectors[0], K, config, inner_seed, n,
                      [float(c) for c in res.best_cost_history[0, :n]])
    plan.optimized_cost = float(res.best_costs[0])
    return plan


def oracle_plan(model: DynamicsModel, gen: GenerativeModel, s0: MazeState, goal: np.ndarray,
                config: HvfConfig, rng: np.random.Generator) -> SubgoalPlan:
    """Subgoals fixed at the bottlenecks (ground-truth baseline)."""
    pos = oracle_subgoal_positions(s0)
    latents = gen.encode_position(pos).ravel()
    return _make_plan(model, gen, s0, goal, latents, len(pos), config, int(rng.integers(2**63)))


def execute_plan(scene: MazeState, model: DynamicsModel, plan: SubgoalPlan, config: HvfConfig,
                 rng: np.random.Generator) -> EpisodeResult:
    """Visit the subgoals in order, then head for the goal within the total budget.

    Each subgoal phase runs until the pixel cost drops under the stop threshold
    or ``subgoal_steps`` elapse; the final phase runs until success or until
    ``total_steps`` are used up.
    """
    goal = render(scene.with_agent(scene.goal), model.raster)
    thr = default_stop_threshold(model) if config.stop_threshold is None else config.stop_threshold
    state, trajectory, phases = scene, [scene], []
    for frame in plan.subgoals:
        budget = min(config.subgoal_steps, config.total_steps - (len(trajectory) - 1))
        if budget <= 0:
            break
        traj, _ = act(model, state, frame, budget, thr, config.exec_mpc, rng)
        trajectory += traj[1:]
        phases.append(len(traj) - 1)
        state = traj[-1]
    remaining = config.total_steps - (len(trajectory) - 1)
    radius = model.geometry.success_radius
    if remaining > 0:
        traj, _ = act(model, state, goal, remaining, config=config.exec_mpc, rng=rng,
                      done=lambda s: maze_env.is_success(s, radius))
        trajectory += traj[1:]
        phases.append(len(traj) - 1)
        state = traj[-1]
    return EpisodeResult(maze_env.is_success(state, radius), trajectory, plan, phases)


def run_hvf_episode(scene: MazeState, model: DynamicsModel, gen: GenerativeModel, config: HvfConfig,
                    rng: np.random.Generator) -> EpisodeResult:
    """Optimize subgoals once from the start, then execute them."""
    goal = render(scene.with_agent(scene.goal), model.raster)
    plan = optimize_subgoals(model, gen, scene, goal, config, rng)
    return execute_plan(scene, model, plan, config, rng)
