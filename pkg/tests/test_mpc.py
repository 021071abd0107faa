import numpy as np
import pytest

from hvf import maze_env, mpc, raster
from hvf.dynamics import OracleDynamics
from hvf.maze_env import MazeState, WallLayout
from hvf.raster import BlobCost, RasterConfig

from conftest import EMPTY

MODEL = OracleDynamics()
A_MAX = MODEL.geometry.a_max
SMALL = mpc.MpcConfig(num_samples=64, num_elites=13, max_iters=3)


def goal_frame(state, model=MODEL):
    return raster.render(state.with_agent(state.goal), model.raster)


def action_grid(n=11):
    g = np.linspace(-A_MAX, A_MAX, n)
    return np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)


def angle_deg(a, d):
    c = a @ d / (np.linalg.norm(a) * np.linalg.norm(d))
    return float(np.degrees(np.arccos(np.clip(c, -1, 1))))


def one_step_direction_trial(seed, config=mpc.MpcConfig(horizon=1)):
    """Empty arena, goal within one step: CEM and an 11x11 grid oracle vs the straight direction."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.15, 0.85, 2)
    th = rng.uniform(0, 2 * np.pi)
    g = s + rng.uniform(0.5, 1.0) * A_MAX * np.array([np.cos(th), np.sin(th)])
    state = MazeState(tuple(s), tuple(g), EMPTY)
    goal = goal_frame(state)
    res = mpc.plan(MODEL, state, goal, config, np.random.default_rng((seed, 1)))
    cost = BlobCost(raster.render_static(EMPTY, state.goal, MODEL.raster), goal, MODEL.raster)
    grid = action_grid()
    grid_costs = cost(s + grid)
    return {
        "cem_angle": angle_deg(res.actions[0], g - s),
        "grid_angle": angle_deg(grid[np.argmin(grid_costs)], g - s),
        "cem_cost": res.predicted_cost,
        "grid_cost": float(grid_costs.min()),
    }


def test_config_validation():
    with pytest.raises(ValueError):
        mpc.MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        mpc.MpcConfig(cost_mode="all_frames")
    with pytest.raises(ValueError):
        mpc.MpcConfig(num_samples=10, num_elites=20)


def test_start_equals_goal_costs_zero(hard_scene):
    s = hard_scene.with_agent(hard_scene.goal)
    res = mpc.plan(MODEL, s, goal_frame(s), SMALL, np.random.default_rng(0))
    assert res.predicted_cost == 0.0
    assert res.actions.shape == (5, 2)


def test_goal_shape_mismatch(hard_scene):
    with pytest.raises(ValueError, match="shape"):
        mpc.plan(MODEL, hard_scene, np.zeros((64, 64, 3)), SMALL, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(10))
def test_one_step_direction_matches_grid_oracle(seed):
    r = one_step_direction_trial(seed)
    assert r["grid_angle"] <= 30
    assert r["cem_cost"] <= r["grid_cost"] + 1e-9


def test_predicted_cost_matches_rollout(hard_scene):
    res = mpc.plan(MODEL, hard_scene, goal_frame(hard_scene), SMALL, np.random.default_rng(1))
    final = MODEL.rollout(hard_scene, res.actions)[-1]
    assert res.predicted_cost == pytest.approx(raster.pixel_cost(final, goal_frame(hard_scene)), abs=1e-9)


def test_never_worse_than_doing_nothing():
    rng = np.random.default_rng(2)
    for i in range(10):
        s = maze_env.sample_scene(("easy", "medium", "hard")[i % 3], rng)
        goal = goal_frame(s)
        res = mpc.plan(MODEL, s, goal, SMALL, np.random.default_rng(i))
        assert res.predicted_cost <= raster.pixel_cost(raster.render(s), goal) + 1e-9


def test_plateau_behind_wall():
    """Goal beyond a wall and out of reach: every candidate is on the plateau."""
    cfg = RasterConfig(32, render_goal_marker=False)
    model = OracleDynamics(raster=cfg)
    lay = WallLayout((0.5,), (0.9,))
    s = MazeState((0.2, 0.2), (0.85, 0.2), lay)
    res = mpc.plan(model, s, goal_frame(s, model), SMALL, np.random.default_rng(0))
    assert res.predicted_cost == pytest.approx(raster.plateau_cost(cfg))


def test_plan_deterministic(hard_scene):
    goal = goal_frame(hard_scene)
    a = mpc.plan(MODEL, hard_scene, goal, SMALL, np.random.default_rng(5))
    b = mpc.plan(MODEL, hard_scene, goal, SMALL, np.random.default_rng(5))
    assert (a.actions == b.actions).all() and a.predicted_cost == b.predicted_cost


def test_actions_within_bounds(hard_scene):
    res = mpc.plan(MODEL, hard_scene, goal_frame(hard_scene), SMALL, np.random.default_rng(6))
    assert np.abs(res.actions).max() <= A_MAX


@pytest.mark.parametrize("seed", range(5))
def test_act_reaches_nearby_goal(seed):
    # last-frame cost lets the agent circle the goal for a while; 50 steps is the episode budget
    s = MazeState((0.3, 0.3), (0.45, 0.4), EMPTY)
    radius = MODEL.geometry.success_radius
    traj, reached = mpc.act(MODEL, s, goal_frame(s), 50, rng=np.random.default_rng(seed),
                            done=lambda x: maze_env.is_success(x, radius))
    assert reached and maze_env.is_success(traj[-1], radius)
    assert not any(maze_env.is_success(x, radius) for x in traj[:-1])


def test_act_threshold_stop():
    s = MazeState((0.3, 0.3), (0.3 + 1 / 32, 0.3), EMPTY)
    goal = goal_frame(s)
    assert raster.pixel_cost(raster.render(s), goal) > 0
    traj, reached = mpc.act(MODEL, s, goal, 5, stop_threshold=1e9, rng=np.random.default_rng(0))
    assert reached and len(traj) == 1


def test_act_step_accounting(hard_scene, monkeypatch):
    calls = []
    real = maze_env.step
    monkeypatch.setattr(maze_env, "step", lambda *a, **k: calls.append(1) or real(*a, **k))
    traj, reached = mpc.act(MODEL, hard_scene, goal_frame(hard_scene), 7, config=SMALL,
                            rng=np.random.default_rng(0))
    assert len(traj) - 1 == len(calls) <= 7
    assert not reached


def test_act_stops_immediately_at_goal(hard_scene):
    s = hard_scene.with_agent(hard_scene.goal)
    traj, reached = mpc.act(MODEL, s, goal_frame(s), 10, config=SMALL, rng=np.random.default_rng(0))
    assert reached and len(traj) == 1


def test_act_rejects_zero_budget(hard_scene):
    with pytest.raises(ValueError):
        mpc.act(MODEL, hard_scene, goal_frame(hard_scene), 0)


def test_default_threshold_is_quarter_plateau():
    assert mpc.default_stop_threshold(MODEL) == pytest.approx(0.25 * raster.plateau_cost(MODEL.raster))
