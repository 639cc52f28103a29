"""Seedable first-person raycast environments for six embodied tasks."""
from .render import PALETTE, cast_rays, render
from .rollout import random_policy_stats, record_episode, replay_actions
from .spec import TASK_IDS, Action, TaskSpec, load_task, task_from_dict
from .world import Entity, WorldState, reset, step

__all__ = [
    "PALETTE",
    "TASK_IDS",
    "Action",
    "Entity",
    "TaskSpec",
    "WorldState",
    "cast_rays",
    "load_task",
    "random_policy_stats",
    "record_episode",
    "render",
    "replay_actions",
    "reset",
    "step",
    "task_from_dict",
]
