import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nprl.env import TASK_IDS, Action, cast_rays, load_task, render, reset, step
from nprl.env.rollout import random_policy, random_policy_stats, record_episode, replay_actions, run_episode
from nprl.env.world import is_wall
from nprl.errors import ConfigError, EnvError


def test_six_tasks_load_with_distinct_action_sets():
    tasks = [load_task(t) for t in TASK_IDS]
    assert len(tasks) == 6
    assert load_task("simpler-basic").actions == (Action.SHOOT, Action.MOVE_LEFT, Action.MOVE_RIGHT)
    assert all(t.n_actions >= 2 for t in tasks)


def test_unknown_task_lists_valid_ids():
    with pytest.raises(EnvError) as err:
        load_task("deathmatch")
    for tid in TASK_IDS:
        assert tid in str(err.value)


def test_bad_resolution_and_disallowed_action():
    with pytest.raises(EnvError):
        reset("simpler-basic", 0, resolution=48)
    state, _ = reset("simpler-basic", 0, render_frame=False)
    with pytest.raises(EnvError):
        step(state, Action.MOVE_FORWARD)


@pytest.mark.parametrize("res", [32, 64, 128])
def test_observation_shape_and_dtype(res):
    _, obs = reset("defend-center", 1, resolution=res)
    assert obs.shape == (res, res, 3) and obs.dtype == np.uint8


def test_step_leaves_input_state_untouched():
    state, _ = reset("predict-position", 2, render_frame=False)
    before = state.snapshot()
    step(state, Action.SHOOT, render_frame=False)
    assert state.snapshot() == before


@pytest.mark.parametrize("tid", TASK_IDS)
def test_reset_is_seed_deterministic(tid):
    a, oa = reset(tid, 11, resolution=32)
    b, ob = reset(tid, 11, resolution=32)
    assert a.snapshot() == b.snapshot() and np.array_equal(oa, ob)


@pytest.mark.parametrize("tid", TASK_IDS)
def test_replay_equality_and_reward_bounds(tid):
    task = load_task(tid)
    lo, hi = task.return_bounds()
    for seed in range(3):
        ret, ticks, actions, rewards = run_episode(task, random_policy(task, seed), seed)
        assert replay_actions(task, seed, actions) == rewards
        assert lo <= ret <= hi
        assert ticks <= task.tick_limit


@pytest.mark.parametrize("tid", TASK_IDS)
def test_walls_never_entered_over_many_random_steps(tid):
    task = load_task(tid)
    rng = np.random.default_rng(0)
    state, _ = reset(task, 0, render_frame=False)
    for _ in range(10_000):
        if state.done:
            state, _ = reset(task, int(rng.integers(1 << 30)), render_frame=False)
        state, _, r, _ = step(state, task.actions[int(rng.integers(task.n_actions))], render_frame=False)
        assert not is_wall(task.grid, state.x, state.y)
        assert math.isfinite(r)


def test_truncation_flag_at_tick_limit():
    task = load_task("take-cover", tick_limit=5, agent={"health": 10_000})
    state, _ = reset(task, 0, render_frame=False)
    while not state.done:
        state, _, _, _ = step(state, Action.MOVE_LEFT, render_frame=False)
    assert state.tick == 5 and state.truncated


def test_raycast_distances_in_empty_room():
    grid = np.ones((7, 7), bool)
    grid[1:6, 1:6] = False
    dist, side, _ = cast_rays(grid, 3.5, 3.5, 0.0, 9)
    # the centre column looks straight along +x: wall face at x = 6
    assert dist[4] == pytest.approx(2.5, abs=1e-9)
    assert (dist > 0).all()
    # symmetric columns see the same perpendicular distance
    np.testing.assert_allclose(dist, dist[::-1], atol=1e-9)


@given(x=st.floats(1.2, 5.8), y=st.floats(1.2, 5.8), h=st.floats(0, 359.9))
def test_raycast_hits_lie_on_walls(x, y, h):
    grid = np.ones((7, 7), bool)
    grid[1:6, 1:6] = False
    dist, _, _ = cast_rays(grid, x, y, h, 16)
    assert np.isfinite(dist).all() and (dist > 0).all()
    # perpendicular distance never exceeds the room diagonal
    assert dist.max() < 5 * math.sqrt(2) + 1e-9


def test_render_deterministic_given_state():
    state, _ = reset("health-gathering", 3, resolution=64)
    assert np.array_equal(render(state, 64), render(state, 64))


def test_random_policy_stats_validates_and_reproduces():
    with pytest.raises(ConfigError):
        random_policy_stats("simpler-basic", 0, 0)
    a = random_policy_stats("take-cover", 4, 9)
    b = random_policy_stats("take-cover", 4, 9)
    assert a["returns"] == b["returns"] and len(a["returns"]) == 4


def test_record_episode_replays(tmp_path):
    task = load_task("simpler-basic", tick_limit=20)
    rec = record_episode(task, random_policy(task, 1), 5, tmp_path / "rec", resolution=32)
    with open(tmp_path / "rec" / "log.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == rec["ticks"] == len(list((tmp_path / "rec").glob("frame_*.png")))
    actions = [Action[r["action"]] for r in rows]
    assert [float(r["reward"]) for r in rows] == replay_actions(task, 5, actions)
