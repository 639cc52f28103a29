"""Episode drivers: random baselines, recording and replay."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, OutputError
from .spec import load_task
from .world import reset, step


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint32)]


def random_policy(task, seed: int):
    """Uniform choice over the task's allowed actions, own seeded stream."""
    task = load_task(task)
    rng = np.random.default_rng([seed, 0x5EED])
    actions = task.actions
    return lambda state, obs: actions[int(rng.integers(len(actions)))]


def run_episode(task, policy, seed: int, resolution: int = 128, render_frames: bool = False):
    """Play one episode; returns (return, ticks, actions, rewards)."""
    state, obs = reset(task, seed, resolution=resolution, render_frame=render_frames)
    actions, rewards = [], []
    while not state.done:
        a = policy(state, obs)
        state, obs, r, _ = step(state, a, render_frame=render_frames)
        actions.append(a)
        rewards.append(r)
    return float(sum(rewards)), state.tick, actions, rewards


def random_policy_stats(task, episodes: int, seed: int) -> dict:
    """Mean and standard deviation of the return of the uniform-random policy."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    task = load_task(task)
    policy = random_policy(task, seed)
    returns, lengths = [], []
    for s in episode_seeds(seed, episodes):
        ret, ticks, _, _ = run_episode(task, policy, s)
        returns.append(ret)
        lengths.append(ticks)
    arr = np.asarray(returns)
    return {
        "task": task.task_id,
        "episodes": episodes,
        "seed": seed,
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if episodes > 1 else 0.0,
        "returns": returns,
        "lengths": lengths,
    }


def replay_actions(task, seed: int, actions) -> list[float]:
    """Rewards obtained by replaying a fixed action sequence from ``reset(task, seed)``."""
    state, _ = reset(task, seed, render_frame=False)
    rewards = []
    for a in actions:
        state, _, r, _ = step(state, a, render_frame=False)
        rewards.append(r)
    return rewards


def record_episode(task, policy, seed: int, out_path, resolution: int = 128) -> dict:
    """Play an episode, writing ``frame_NNNNN.png`` per tick and ``log.csv``."""
    out = Path(out_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc}") from exc
    state, obs = reset(task, seed, resolution=resolution)
    rows, total = [], 0.0
    try:
        while not state.done:
            a = policy(state, obs)
            state, obs, r, done = step(state, a)
            total += r
            Image.fromarray(obs).save(out / f"frame_{state.tick:05d}.png")
            rows.append((state.tick, a.name, repr(r), int(done)))
        with open(out / "log.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["tick", "action", "reward", "done"])
            w.writerows(rows)
    except OSError as exc:
        raise OutputError(f"writing episode to {out} failed: {exc}") from exc
    return {"return": total, "ticks": state.tick, "actions": [r[1] for r in rows], "path": str(out)}
