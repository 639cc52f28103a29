"""Task definitions: actions, maps, rewards and limits loaded from JSON."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import EnvError

TASK_IDS = (
    "simpler-basic",
    "defend-center",
    "predict-position",
    "take-cover",
    "my-way-home",
    "health-gathering",
)

_REQUIRED = {"task_id", "actions", "map", "rewards", "tick_limit", "agent", "spawn", "params", "motion", "render"}
_OPTIONAL = {"description"}


class Action(enum.IntEnum):
    SHOOT = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    MOVE_LEFT = 3
    MOVE_RIGHT = 4
    MOVE_FORWARD = 5


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    actions: tuple[Action, ...]
    map: tuple[str, ...]
    rewards: dict
    tick_limit: int
    agent: dict
    spawn: dict
    params: dict
    motion: dict
    render: dict
    description: str = ""
    grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise EnvError(f"unknown task id {self.task_id!r}; valid tasks: {', '.join(TASK_IDS)}")
        if not self.actions:
            raise EnvError(f"{self.task_id}: empty action set")
        if self.tick_limit <= 0:
            raise EnvError(f"{self.task_id}: tick limit must be positive")
        for k, v in self.rewards.items():
            if not math.isfinite(v):
                raise EnvError(f"{self.task_id}: reward {k!r} is not finite")
        widths = {len(r) for r in self.map}
        if len(widths) != 1:
            raise EnvError(f"{self.task_id}: map rows have unequal widths")
        grid = np.array([[ch == "#" for ch in row] for row in self.map], dtype=bool)
        if not (grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all()):
            raise EnvError(f"{self.task_id}: map must be enclosed by walls")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def action_index(self, action: Action) -> int:
        return self.actions.index(action)

    def cells(self, symbol: str) -> list[tuple[int, int]]:
        """(row, col) of every map cell carrying ``symbol``."""
        return [(i, j) for i, row in enumerate(self.map) for j, ch in enumerate(row) if ch == symbol]

    def return_bounds(self) -> tuple[float, float]:
        """Analytic (min, max) of an episode's total reward under the reward table."""
        r, n = self.rewards, self.tick_limit
        live = r.get("living", 0.0)
        tid = self.task_id
        if tid == "simpler-basic":
            shots = n if self.agent.get("ammo") is None else min(n, self.agent["ammo"])
            return n * live + shots * r["shot"], r["kill"] + r["shot"] + live
        if tid == "defend-center":
            return r["death"] + n * min(live, 0.0), self.agent["ammo"] * r["kill"] + n * max(live, 0.0)
        if tid == "predict-position":
            return n * live, r["hit"] + live
        if tid == "my-way-home":
            return n * live, r["goal"] + live
        return 0.0, n * live  # take-cover, health-gathering: +living per tick survived

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "description": self.description,
            "actions": [a.name for a in self.actions],
            "map": list(self.map),
            "rewards": dict(self.rewards),
            "tick_limit": self.tick_limit,
            "agent": dict(self.agent),
            "spawn": dict(self.spawn),
            "params": dict(self.params),
            "motion": dict(self.motion),
            "render": dict(self.render),
        }


def task_from_dict(doc: dict) -> TaskSpec:
    keys = set(doc)
    missing = _REQUIRED - keys
    extra = keys - _REQUIRED - _OPTIONAL
    if missing or extra:
        raise EnvError(f"task file keys: missing {sorted(missing)}, unknown {sorted(extra)}")
    try:
        actions = tuple(Action[name] for name in doc["actions"])
    except KeyError as exc:
        raise EnvError(f"unknown action {exc.args[0]!r}; valid: {[a.name for a in Action]}") from None
    return TaskSpec(
        task_id=doc["task_id"],
        actions=actions,
        map=tuple(doc["map"]),
        rewards={k: float(v) for k, v in doc["rewards"].items()},
        tick_limit=int(doc["tick_limit"]),
        agent=dict(doc["agent"]),
        spawn=dict(doc["spawn"]),
        params=dict(doc["params"]),
        motion=dict(doc["motion"]),
        render=dict(doc["render"]),
        description=doc.get("description", ""),
    )


def load_task(task, **overrides) -> TaskSpec:
    """Load a bundled task by id, or a task JSON file by path.

    ``overrides`` replace whole top-level sections, e.g. ``render={...}``.
    """
    if isinstance(task, TaskSpec):
        if not overrides:
            return task
        doc = task.to_json()
    elif isinstance(task, (str, Path)) and str(task).endswith(".json"):
        doc = json.loads(Path(task).read_text())
    else:
        if task not in TASK_IDS:
            raise EnvError(f"unknown task {task!r}; valid tasks: {', '.join(TASK_IDS)}")
        text = resources.files("nprl.env").joinpath("tasks", f"{task}.json").read_text()
        doc = json.loads(text)
    for k, v in overrides.items():
        if isinstance(doc.get(k), dict) and isinstance(v, dict):
            doc[k] = {**doc[k], **v}
        else:
            doc[k] = v
    return task_from_dict(doc)
