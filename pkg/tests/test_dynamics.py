import json

import numpy as np
import pytest

from hvf import maze_env, raster
from hvf.dynamics import (InteractionDataset, OracleDynamics, SurrogateDynamics, fit_surrogate,
                          rollout_oracle, rollout_surrogate)
from hvf.harness import ExperimentConfig, collect
from hvf.raster import RasterConfig

from conftest import empty_state

GEO = maze_env.DEFAULT_GEOMETRY
R32 = RasterConfig(32)


@pytest.fixture(scope="module")
def data() -> InteractionDataset:
    return collect(ExperimentConfig(), episodes=120, horizon=50, seed=3)


@pytest.fixture(scope="module")
def surrogate(data):
    return fit_surrogate(data, k=8)


def _single_steps(data, keep):
    """Re-pack selected transitions as one-step episodes."""
    e, t = np.nonzero(keep)
    pos = np.stack([data.positions[e, t], data.positions[e, t + 1]], axis=1)
    return InteractionDataset(data.wall_x[e], data.gap_y[e], data.goals[e], pos,
                              data.actions[e, t][:, None], data.geometry, data.seed)


# ---- oracle


def test_zero_actions_repeat_start(hard_scene):
    frames = rollout_oracle(hard_scene, np.zeros((4, 2)))
    start = raster.render(hard_scene)
    assert len(frames) == 4 and all((f == start).all() for f in frames)


def test_single_free_action_translates_blob():
    s = empty_state((0.40625, 0.40625))
    frames = rollout_oracle(s, [(2 / 32, 1 / 32)], raster=RasterConfig(32, render_goal_marker=False))
    blob = np.argwhere(np.all(frames[0] == raster.AGENT, axis=-1))
    before = np.argwhere(np.all(raster.render(s, RasterConfig(32, render_goal_marker=False)) == raster.AGENT, axis=-1))
    assert (blob - before == [-1, 2]).all()


def test_rollout_compositional(hard_scene):
    rng = np.random.default_rng(0)
    a = rng.uniform(-GEO.a_max, GEO.a_max, (7, 2))
    whole = rollout_oracle(hard_scene, a)
    mid = hard_scene
    for act in a[:3]:
        mid = maze_env.step(mid, act)
    parts = rollout_oracle(hard_scene, a[:3]) + rollout_oracle(mid, a[3:])
    assert all((x == y).all() for x, y in zip(whole, parts))


def test_oracle_final_frame_is_folded_step(hard_scene):
    rng = np.random.default_rng(1)
    a = rng.uniform(-GEO.a_max, GEO.a_max, (10, 2))
    s = hard_scene
    for act in a:
        s = maze_env.step(s, act)
    assert (rollout_oracle(hard_scene, a)[-1] == raster.render(s)).all()


def test_rollout_length_contract(hard_scene):
    model = OracleDynamics()
    with pytest.raises(ValueError):
        model.rollout(hard_scene, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        model.rollout(hard_scene, np.zeros((65, 2)))
    assert len(model.rollout(hard_scene, np.zeros((64, 2)))) == 64


# ---- dataset


def test_dataset_transitions_replay(data):
    for e in range(0, data.num_episodes, 17):
        for t in range(data.horizon):
            s = maze_env.step(data.state(e, t), data.actions[e, t], data.geometry)
            assert s.agent == tuple(data.positions[e, t + 1])


def test_dataset_save_load(tmp_path, data):
    rec, man = data.save(tmp_path / "ds")
    back = InteractionDataset.load(tmp_path / "ds")
    assert back.content_hash() == data.content_hash()
    assert back.geometry == data.geometry
    manifest = json.loads(open(man).read())
    assert manifest["transitions"] == data.num_transitions
    assert manifest["seed"] == 3


def test_dataset_tamper_detected(tmp_path, data):
    data.save(tmp_path / "ds")
    bad = InteractionDataset(data.wall_x, data.gap_y, data.goals, data.positions + 1e-9, data.actions,
                             data.geometry, data.seed)
    np.savez(tmp_path / "ds" / "transitions.npz", wall_x=bad.wall_x, gap_y=bad.gap_y, goals=bad.goals,
             positions=bad.positions, actions=bad.actions)
    with pytest.raises(ValueError, match="hash"):
        InteractionDataset.load(tmp_path / "ds")


def test_dataset_missing_path_has_context(tmp_path):
    with pytest.raises(OSError, match=str(tmp_path / "nope")):
        InteractionDataset.load(tmp_path / "nope")


def test_frames_rerendered(data):
    frames = data.frames(0, R32)
    assert len(frames) == data.horizon + 1
    assert (frames[5] == raster.render(data.state(0, 5), R32)).all()


# ---- surrogate


def test_fit_rejects_small_or_empty(data):
    small = collect(ExperimentConfig(), episodes=2, horizon=5, seed=0)
    with pytest.raises(ValueError, match="1000"):
        fit_surrogate(small)
    empty = InteractionDataset(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)),
                               np.zeros((0, 1, 2)), np.zeros((0, 0, 2)))
    with pytest.raises(ValueError, match="empty"):
        fit_surrogate(empty)


def test_holdout_error_reported(surrogate):
    assert np.isfinite(surrogate.holdout_error) and surrogate.holdout_error >= 0


def test_free_space_identity(data):
    disp = data.positions[:, 1:] - data.positions[:, :-1]
    free = np.linalg.norm(disp - data.actions, axis=-1) < 1e-12
    model = fit_surrogate(_single_steps(data, free), k=8)
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 200:
        e, t = rng.integers(data.num_episodes), rng.integers(data.horizon)
        if not free[e, t]:
            continue
        lay = data.layout(e)
        act = rng.uniform(-GEO.a_max, GEO.a_max, 2)
        p = data.positions[e, t]
        nxt = maze_env.step_batch(lay, p[None], act[None])[0]
        if np.linalg.norm(nxt - p - act) > 1e-12:
            continue
        pred = model.predict_displacement(lay, p, act)[0]
        assert np.linalg.norm(pred - act) <= 0.1 * np.linalg.norm(act) + 1e-3 * GEO.a_max
        checked += 1


def test_k1_exact_training_input(data):
    model = fit_surrogate(data, k=1, holdout_fraction=0.0)
    for e, t in [(0, 0), (5, 10), (40, 49)]:
        pred = model.predict_displacement(data.layout(e), data.positions[e, t], data.actions[e, t])[0]
        np.testing.assert_allclose(pred, data.positions[e, t + 1] - data.positions[e, t], atol=1e-15)


def test_collisions_shorten_predicted_motion(data, surrogate):
    n_train = data.num_episodes - int(round(data.num_episodes * 0.1))
    shorter = total = 0
    for e in range(n_train, data.num_episodes):
        lay = data.layout(e)
        for t in range(data.horizon):
            p, a = data.positions[e, t], data.actions[e, t]
            true = data.positions[e, t + 1] - p
            if np.linalg.norm(true) < 0.5 * np.linalg.norm(a) and np.linalg.norm(a) > 0.5 * GEO.a_max:
                pred = surrogate.predict_displacement(lay, p, a)[0]
                shorter += np.linalg.norm(pred) < np.linalg.norm(a)
                total += 1
    assert total >= 20
    assert shorter / total >= 0.9


def test_surrogate_positions_stay_free(data, surrogate):
    model = SurrogateDynamics(surrogate, R32)
    rng = np.random.default_rng(9)
    for _ in range(20):
        s = maze_env.sample_scene("hard", rng)
        starts = rng.uniform(0, 1, (200, 2))
        starts = starts[maze_env.free_space_mask(s.layout, starts)]
        acts = rng.uniform(-GEO.a_max, GEO.a_max, (len(starts), 10, 2))
        pos = model.predict_positions(s.layout, starts, acts)
        assert maze_env.free_space_mask(s.layout, pos.reshape(-1, 2)).all()


def test_surrogate_zero_actions_and_length(hard_scene, surrogate):
    frames = rollout_surrogate(surrogate, hard_scene, np.zeros((3, 2)))
    assert len(frames) == 3
    assert all((f == raster.render(hard_scene)).all() for f in frames)


def test_surrogate_matches_oracle_in_free_space(surrogate):
    lay = maze_env.WallLayout((0.33, 0.66), (0.5, 0.5))
    s = maze_env.MazeState((0.45, 0.2), (0.9, 0.5), lay)
    acts = np.array([[0.0, 0.6 * GEO.a_max]] * 5)
    a = rollout_oracle(s, acts)
    b = rollout_surrogate(surrogate, s, acts)
    # at most a one-pixel blob offset per frame
    tol = 2 * R32.blob_px * sum((x - y) ** 2 for x, y in zip(raster.AGENT, raster.BACKGROUND))
    assert all(raster.pixel_cost(x, y) <= tol for x, y in zip(a, b))


def test_surrogate_deterministic(hard_scene, surrogate):
    acts = np.random.default_rng(2).uniform(-GEO.a_max, GEO.a_max, (6, 2))
    a = rollout_surrogate(surrogate, hard_scene, acts)
    b = rollout_surrogate(surrogate, hard_scene, acts)
    assert all((x == y).all() for x, y in zip(a, b))


def test_surrogate_json(surrogate):
    meta = surrogate.to_json()
    assert meta["k"] == 8 and "geometry_hash" in meta
