"""A two-state, two-action MDP with pixel observations and its exact Q*.

States A (0) and B (1)::

    A, a0 -> B, r=0        A, a1 -> A, r=1
    B, a0 -> end, r=2      B, a1 -> A, r=0

Each state is shown as a fixed image so the convolutional Q-network sees it
through the same pipeline as the raycast tasks.
"""
from __future__ import annotations

import numpy as np

# (next_state or None for terminal, reward) indexed [state][action]
TRANSITIONS = (((1, 0.0), (0, 1.0)), ((None, 2.0), (0, 0.0)))


def value_iteration(gamma: float, transitions=TRANSITIONS, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Q* by synchronous Bellman optimality backups on the tabular model."""
    n_s, n_a = len(transitions), len(transitions[0])
    q = np.zeros((n_s, n_a))
    for _ in range(max_iter):
        new = np.empty_like(q)
        for s in range(n_s):
            for a in range(n_a):
                nxt, r = transitions[s][a]
                new[s, a] = r + (0.0 if nxt is None else gamma * q[nxt].max())
        if np.abs(new - q).max() < tol:
            return new
        q = new
    return q


def state_image(state: int, resolution: int) -> np.ndarray:
    """uint8 H x W x 3 frame: bright left half for A, bright right half for B."""
    img = np.full((resolution, resolution, 3), 40, np.uint8)
    half = resolution // 2
    if state == 0:
        img[:, :half] = 220
    else:
        img[:, half:] = 220
    return img


class TwoStateEnv:
    """Episodic wrapper; episodes are cut (truncated, not terminal) after ``horizon`` steps."""

    def __init__(self, resolution: int = 32, horizon: int = 20, start_state: int | None = None):
        self.resolution = resolution
        self.horizon = horizon
        self.start_state = start_state
        self.n_actions = 2
        self.state = 0
        self.t = 0
        self._rng = None

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = int(rng.integers(2)) if self.start_state is None else self.start_state
        self.t = 0
        return state_image(self.state, self.resolution)

    def step(self, action: int):
        nxt, r = TRANSITIONS[self.state][int(action)]
        self.t += 1
        if nxt is None:
            return state_image(self.state, self.resolution), r, True, False, 1
        self.state = nxt
        return state_image(nxt, self.resolution), r, False, self.t >= self.horizon, 1
