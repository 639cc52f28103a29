"""Deep Q-learning with a dueling network, replay buffer and target network.

All step counts in :class:`DqnConfig` (``total_steps``, ``learning_starts``,
``target_sync``, ``eps_decay_steps``, ``checkpoint_every``) are environment
ticks; with ``action_repeat = k`` one agent decision consumes ``k`` ticks.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .env import load_task, render, reset, step
from .env.rollout import episode_seeds
from .errors import ConfigError, NumericError, ShapeError
from .model import Head, ModelGraph, TrunkConfig, build_model
from .optim import clip_grad_norm, make_optimizer, optimizer_step

log = logging.getLogger(__name__)


@dataclass
class DqnConfig:
    gamma: float = 0.99
    lr: float = 2.5e-4
    lr_end: float | None = None  # linear anneal of the learning rate over total_steps when set
    optimizer: str = "rmsprop"
    batch_size: int = 32
    buffer_capacity: int = 100_000
    target_sync: int = 1_000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 100_000
    total_steps: int = 200_000
    learning_starts: int = 1_000
    train_every: int = 1
    action_repeat: int = 4
    resolution: int = 128
    frame_stack: int = 1
    reward_scale: float = 1.0
    grad_clip: float | None = None
    batchnorm: str = "batch"  # "batch": train-mode statistics; "frozen": running statistics only
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("lr", "batch_size", "buffer_capacity", "target_sync", "action_repeat", "frame_stack",
                     "train_every", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("total_steps", "learning_starts", "eps_decay_steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0):
            raise ConfigError("epsilon values must lie in [0, 1]")
        if self.eps_end > self.eps_start:
            raise ConfigError("epsilon schedule must be non-increasing (eps_end <= eps_start)")
        if self.batchnorm not in ("batch", "frozen"):
            raise ConfigError("batchnorm must be 'batch' or 'frozen'")
        if self.lr_end is not None and not self.lr_end > 0:
            raise ConfigError("lr_end must be positive when set")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def epsilon_at(cfg: DqnConfig, step_count: int) -> float:
    """Linear decay from ``eps_start`` to ``eps_end`` over ``eps_decay_steps`` ticks."""
    if cfg.eps_decay_steps == 0:
        return cfg.eps_end
    frac = min(1.0, step_count / cfg.eps_decay_steps)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


# ---------------------------------------------------------------------------- pieces


def preprocess(frame: np.ndarray, stack: list[np.ndarray] | None = None, resolution: int | None = None) -> np.ndarray:
    """uint8 H x W x 3 frame (plus earlier frames) -> float32 3d x H x W in [0, 1]."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 frame, got {frame.shape}")
    if resolution is not None and frame.shape[:2] != (resolution, resolution):
        raise ShapeError(f"frame is {frame.shape[:2]}, expected {resolution}x{resolution}")
    frames = list(stack or []) + [frame]
    x = np.concatenate(frames, axis=2).astype(np.float32) / np.float32(255.0)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def td_target(r: float, done: bool, q_next, gamma: float) -> float:
    q_next = np.asarray(q_next, dtype=np.float64)
    if q_next.size == 0:
        raise ShapeError("td_target: empty next-state action values")
    if done:
        return float(r)
    return float(r + gamma * q_next.max())


def epsilon_greedy(q, eps: float, rng: np.random.Generator) -> int:
    """Uniform action with probability ``eps``, else the lowest-index argmax."""
    q = np.asarray(q)
    u = rng.random()
    if u < eps:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def sync_target(online: ModelGraph, target: ModelGraph) -> None:
    target.load_state(online)


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise ConfigError("replay capacity must be positive")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.inserted = 0
        self._s = self._s2 = None
        self._a = np.zeros(capacity, np.int64)
        self._r = np.zeros(capacity, np.float32)
        self._d = np.zeros(capacity, bool)

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, s, a: int, r: float, s2, done: bool) -> None:
        if not abs(float(r)) <= float(np.finfo(np.float32).max):
            raise NumericError(f"reward {r} is not finite in float32")
        s = np.asarray(s)
        if self._s is None:
            self._s = np.zeros((self.capacity,) + s.shape, s.dtype)
            self._s2 = np.zeros_like(self._s)
        i = self.inserted % self.capacity
        self._s[i] = s
        self._s2[i] = s2
        self._a[i] = a
        self._r[i] = r
        self._d[i] = done
        self.inserted += 1

    def sample(self, batch_size: int):
        n = len(self)
        if n < batch_size:
            raise ConfigError(f"cannot sample {batch_size} transitions from a buffer holding {n}")
        idx = self.rng.integers(0, n, size=batch_size)
        return self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx]

    def contents(self) -> list[tuple]:
        """Stored transitions, oldest first."""
        n = len(self)
        start = self.inserted - n
        return [
            (self._s[k % self.capacity], int(self._a[k % self.capacity]), float(self._r[k % self.capacity]),
             self._s2[k % self.capacity], bool(self._d[k % self.capacity]))
            for k in range(start, self.inserted)
        ]


def _to_input(obs_u8: np.ndarray) -> np.ndarray:
    """Batch of stored uint8 H x W x C observations -> float N x C x H x W."""
    return np.ascontiguousarray(obs_u8.transpose(0, 3, 1, 2), dtype=np.float32) / np.float32(255.0)


def dqn_loss(batch, online: ModelGraph, target: ModelGraph, gamma: float, mode: str = "train") -> T.Tensor:
    """Mean over the batch of (y - Q(s, a))^2 with y from the target network held constant."""
    if not online.same_architecture(target):
        raise ConfigError("online and target networks differ in architecture")
    s, a, r, s2, d = batch
    if len(a) == 0:
        raise ShapeError("empty batch")
    x = s if s.dtype != np.uint8 else _to_input(s)
    x2 = s2 if s2.dtype != np.uint8 else _to_input(s2)
    with T.no_grad():
        q_next = target.forward(x2, "eval").data.astype(np.float64)
    y = np.asarray(r, np.float64) + gamma * (1.0 - np.asarray(d, np.float64)) * q_next.max(axis=1)
    q = online.forward(x, mode)
    return T.mse(T.select(q, a), y.astype(q.dtype))


# ---------------------------------------------------------------------------- environments


class RaycastEnv:
    """Adapter: action repeat, rendering only the frame the agent sees."""

    def __init__(self, task, resolution: int = 128, action_repeat: int = 4):
        self.task = load_task(task)
        self.resolution = resolution
        self.action_repeat = action_repeat
        self.n_actions = self.task.n_actions
        self.state = None

    def reset(self, seed: int) -> np.ndarray:
        self.state, obs = reset(self.task, seed, resolution=self.resolution)
        return obs

    def step(self, action: int):
        act = self.task.actions[action]
        total, ticks = 0.0, 0
        for _ in range(self.action_repeat):
            self.state, obs, r, done = step(self.state, act, render_frame=False)
            total += r
            ticks += 1
            if done:
                break
        obs = render(self.state, self.resolution)
        return obs, total, self.state.done and not self.state.truncated, self.state.truncated, ticks


# ---------------------------------------------------------------------------- training


@dataclass
class DqnResult:
    model: ModelGraph
    metrics: list[dict]
    target: ModelGraph
    updates: int = 0


METRIC_FIELDS = ("step", "episode", "return", "loss", "epsilon")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in METRIC_FIELDS])


def train_dqn(task, cfg: DqnConfig, env=None, out_dir=None, progress=None) -> DqnResult:
    """Run the act / store / sample / minimize / sync loop for ``cfg.total_steps`` ticks.

    ``env`` overrides the raycast adapter built from ``task`` (any object with
    ``n_actions``, ``reset(seed)`` and ``step(a)`` as in :class:`RaycastEnv`).
    """
    if env is None:
        env = RaycastEnv(task, cfg.resolution, cfg.action_repeat)
    trunk = TrunkConfig(resolution=cfg.resolution, in_channels=3 * cfg.frame_stack)
    online = build_model(trunk, Head.dueling(env.n_actions), seed=cfg.seed)
    target = online.copy()
    online.meta = {"trainer": "dqn", "task": getattr(getattr(env, "task", None), "task_id", str(task)),
                   "config": cfg.to_dict()}
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    buffer = ReplayBuffer(cfg.buffer_capacity, seed=cfg.seed + 1)
    act_rng = np.random.default_rng([cfg.seed, 2])
    train_mode = "train" if cfg.batchnorm == "batch" else "eval"
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    metrics: list[dict] = []
    steps = decisions = updates = episode = 0
    next_sync = cfg.target_sync
    next_ckpt = cfg.checkpoint_every or None
    seeds = iter(_episode_seed_stream(cfg.seed))
    while steps < cfg.total_steps:
        frame = env.reset(next(seeds))
        history = [frame] * (cfg.frame_stack - 1)
        obs = np.concatenate(history + [frame], axis=2)
        ep_return, ep_losses = 0.0, []
        while True:
            eps = epsilon_at(cfg, steps)
            with T.no_grad():
                q = online.forward(_to_input(obs[None]), "eval").data[0]
            a = epsilon_greedy(q, eps, act_rng)
            frame, r, terminated, truncated, ticks = env.step(a)
            steps += ticks
            decisions += 1
            if cfg.frame_stack > 1:
                history = history[1:] + [obs[..., -3:]]
            nxt = np.concatenate(history + [frame], axis=2) if cfg.frame_stack > 1 else frame
            buffer.add(obs, a, r * cfg.reward_scale, nxt, terminated)
            ep_return += r
            obs = nxt

            if steps >= cfg.learning_starts and len(buffer) >= cfg.batch_size and decisions % cfg.train_every == 0:
                batch = buffer.sample(cfg.batch_size)
                online.zero_grad()
                try:
                    loss = dqn_loss(batch, online, target, cfg.gamma, train_mode)
                    loss.backward()
                except NumericError as exc:
                    _dump_batch(out, batch, steps)
                    raise NumericError(f"non-finite loss at step {steps} (update {updates}): {exc}") from exc
                if cfg.grad_clip is not None:
                    clip_grad_norm(online.parameters(), cfg.grad_clip)
                if cfg.lr_end is not None:
                    frac = min(1.0, steps / max(cfg.total_steps, 1))
                    opt.lr = cfg.lr + frac * (cfg.lr_end - cfg.lr)
                optimizer_step(online.parameters(), opt)
                updates += 1
                ep_losses.append(loss.item())
            if steps >= next_sync:
                sync_target(online, target)
                next_sync += cfg.target_sync
            if next_ckpt is not None and out is not None and steps >= next_ckpt:
                save_checkpoint(online, out / f"checkpoint_{next_ckpt:08d}.nprl")
                next_ckpt += cfg.checkpoint_every
            if terminated or truncated or steps >= cfg.total_steps:
                break
        episode += 1
        row = {
            "step": steps,
            "episode": episode,
            "return": float(ep_return),
            "loss": float(np.mean(ep_losses)) if ep_losses else float("nan"),
            "epsilon": float(epsilon_at(cfg, steps)),
        }
        metrics.append(row)
        if progress is not None:
            progress(row)
    online.meta["steps"] = steps
    online.meta["updates"] = updates
    if out is not None:
        write_metrics(metrics, out / "metrics.csv")
        save_checkpoint(online, out / "model.nprl")
    return DqnResult(model=online, metrics=metrics, target=target, updates=updates)


def _episode_seed_stream(seed: int, chunk: int = 1024):
    k = 0
    while True:
        yield from episode_seeds(seed * 7919 + k, chunk)
        k += 1


def _dump_batch(out: Path | None, batch, steps: int) -> None:
    if out is None:
        return
    s, a, r, s2, d = batch
    np.savez_compressed(out / f"nonfinite_batch_{steps}.npz", s=s, a=a, r=r, s2=s2, d=d)
    log.error("dumped offending batch to %s", out / f"nonfinite_batch_{steps}.npz")


def greedy_q(model: ModelGraph, frame: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return model.forward(_to_input(np.asarray(frame)[None]), "eval").data[0]


def model_policy(model: ModelGraph, task, epsilon: float = 0.0, seed: int = 0, action_repeat: int = 1):
    """Epsilon-greedy over a Q-network's outputs, holding each choice for ``action_repeat`` ticks."""
    task = load_task(task)
    if model.head.n_outputs != task.n_actions:
        raise ConfigError(f"model has {model.head.n_outputs} outputs, task {task.task_id} has {task.n_actions} actions")
    rng = np.random.default_rng([seed, 0xA11])
    held = {"action": None, "left": 0}

    def act(state, obs):
        if held["left"] == 0:
            held["action"] = task.actions[epsilon_greedy(greedy_q(model, obs), epsilon, rng)]
            held["left"] = action_repeat
        held["left"] -= 1
        return held["action"]

    return act


def save_config(cfg: DqnConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
