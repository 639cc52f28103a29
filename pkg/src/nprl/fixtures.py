"""Pinned training configurations used by the verification bundle and the tests."""
from __future__ import annotations

from .dqn import DqnConfig
from .supervised import SupConfig


def mdp_anchor_config(seed: int = 0) -> DqnConfig:
    """DQN on the two-state MDP: uniform exploration, frozen normalization, annealed Adam."""
    return DqnConfig(
        gamma=0.9,
        lr=2e-3,
        lr_end=1e-6,
        optimizer="adam",
        batch_size=16,
        buffer_capacity=2_000,
        target_sync=10,
        eps_start=1.0,
        eps_end=1.0,
        eps_decay_steps=0,
        total_steps=1_600,
        learning_starts=100,
        action_repeat=1,
        resolution=32,
        batchnorm="frozen",
        seed=seed,
    )


def simpler_basic_config(seed: int = 0) -> DqnConfig:
    """200k ticks of simpler-basic at 64 x 64; one update every 4 decisions (16 ticks)."""
    return DqnConfig(
        gamma=0.99,
        lr=2.5e-4,
        optimizer="rmsprop",
        batch_size=32,
        buffer_capacity=20_000,
        target_sync=4_000,
        eps_start=1.0,
        eps_end=0.1,
        eps_decay_steps=100_000,
        total_steps=200_000,
        learning_starts=4_000,
        train_every=4,
        action_repeat=4,
        resolution=64,
        reward_scale=0.01,
        grad_clip=10.0,
        seed=seed,
    )


GRATINGS = {"samples_per_class": 256, "resolution": 64, "seed": 0}
MIX20 = {"n_object_classes": 10, "n_texture_classes": 10, "samples_per_class": 150, "resolution": 64, "seed": 0}


def gratings_config(seed: int = 0) -> SupConfig:
    """One epoch over horizontal-vs-vertical gratings."""
    return SupConfig(epochs=1, batch_size=32, lr=1e-3, seed=seed)


def mix20_config(seed: int = 0) -> SupConfig:
    """Eight epochs over the 20-class object/texture mix (3,000 items at 64 x 64)."""
    return SupConfig(epochs=8, batch_size=32, lr=1e-3, seed=seed)
