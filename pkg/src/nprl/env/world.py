"""World state and per-tick dynamics for the six tasks.

Coordinates: ``x`` runs along map columns and ``y`` along map rows, in cell
units; cell ``(row, col)`` covers ``[col, col+1) x [row, row+1)``.  Heading is
in degrees, direction ``(cos h, sin h)``; turning left increases it.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import EnvError
from .render import render
from .spec import Action, TaskSpec, load_task

RESOLUTIONS = (32, 64, 128)


@dataclass
class Entity:
    eid: int
    kind: str  # monster | missile | medkit | goal
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    alive: bool = True
    timer: int = 0
    owner: str = ""


@dataclass
class WorldState:
    task: TaskSpec
    tick: int
    x: float
    y: float
    heading: float
    health: int
    ammo: int | None
    entities: list[Entity]
    rng: np.random.Generator
    resolution: int = 128
    done: bool = False
    truncated: bool = False
    counters: dict = field(default_factory=dict)

    def copy(self) -> "WorldState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = copy.deepcopy(self.rng.bit_generator.state)
        return WorldState(
            task=self.task,
            tick=self.tick,
            x=self.x,
            y=self.y,
            heading=self.heading,
            health=self.health,
            ammo=self.ammo,
            entities=[copy.copy(e) for e in self.entities],
            rng=rng,
            resolution=self.resolution,
            done=self.done,
            truncated=self.truncated,
            counters=dict(self.counters),
        )

    def snapshot(self) -> tuple:
        """Hashable summary used for replay-equality checks."""
        ents = tuple((e.eid, e.kind, e.x, e.y, e.vx, e.vy, e.alive, e.timer) for e in self.entities)
        return (self.tick, self.x, self.y, self.heading, self.health, self.ammo, ents, self.done, self.truncated,
                tuple(sorted(self.counters.items())))

    def monsters(self, alive: bool = True) -> list[Entity]:
        return [e for e in self.entities if e.kind == "monster" and e.alive == alive]


# ---------------------------------------------------------------------------- geometry


def is_wall(grid: np.ndarray, x: float, y: float) -> bool:
    i, j = math.floor(y), math.floor(x)
    if i < 0 or j < 0 or i >= grid.shape[0] or j >= grid.shape[1]:
        return True
    return bool(grid[i, j])


def _fits(grid: np.ndarray, x: float, y: float, r: float) -> bool:
    return not any(is_wall(grid, x + dx, y + dy) for dx in (-r, r) for dy in (-r, r))


def angle_diff(a: float, b: float) -> float:
    """Signed a - b wrapped to [-180, 180)."""
    return (a - b + 180.0) % 360.0 - 180.0


def line_of_sight(grid: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> bool:
    dist = math.hypot(x1 - x0, y1 - y0)
    n = max(1, int(dist / 0.05))
    for k in range(1, n):
        t = k / n
        if is_wall(grid, x0 + t * (x1 - x0), y0 + t * (y1 - y0)):
            return False
    return True


def _move_agent(s: WorldState, angle_deg: float) -> None:
    step = s.task.motion["move_step"]
    r = s.task.motion["agent_radius"]
    a = math.radians(angle_deg)
    nx = s.x + step * math.cos(a)
    ny = s.y + step * math.sin(a)
    grid = s.task.grid
    # axis-separated so the agent slides along walls instead of sticking
    if _fits(grid, nx, s.y, r):
        s.x = nx
    if _fits(grid, s.x, ny, r):
        s.y = ny


def _new_id(s: WorldState) -> int:
    eid = s.counters.get("next_id", 0)
    s.counters["next_id"] = eid + 1
    return eid


def _free_cells(task: TaskSpec) -> list[tuple[int, int]]:
    return [(i, j) for i, row in enumerate(task.map) for j, ch in enumerate(row) if ch != "#"]


# ---------------------------------------------------------------------------- reset


def reset(task, seed: int, resolution: int = 128, render_frame: bool = True):
    """Start an episode; returns ``(state, observation)``."""
    task = load_task(task)
    if resolution not in RESOLUTIONS:
        raise EnvError(f"resolution must be one of {RESOLUTIONS}, got {resolution}")
    rng = np.random.default_rng(seed)
    ag = task.agent
    s = WorldState(
        task=task,
        tick=0,
        x=0.0,
        y=0.0,
        heading=0.0,
        health=int(ag["health"]),
        ammo=None if ag.get("ammo") is None else int(ag["ammo"]),
        entities=[],
        rng=rng,
        resolution=resolution,
        counters={"next_id": 0},
    )
    if ag["spawn"] == "room":
        rooms = task.spawn["spawn_rooms"]
        room = rooms[int(rng.integers(len(rooms)))]
        cells = task.cells(room)
        i, j = cells[int(rng.integers(len(cells)))]
        s.x, s.y = j + 0.5, i + 0.5
        s.counters["spawn_room"] = int(room)
    else:
        s.x, s.y = (float(v) for v in ag["spawn"])
    if ag.get("heading_deg") is None:
        steps = int(round(360.0 / task.motion["turn_step_deg"]))
        s.heading = float(int(rng.integers(steps)) * task.motion["turn_step_deg"]) % 360.0
    else:
        s.heading = float(ag["heading_deg"]) % 360.0
    _RESET[task.task_id](s)
    obs = render(s, resolution) if render_frame else None
    return s, obs


def _reset_simpler_basic(s: WorldState) -> None:
    sp = s.task.spawn
    off = s.rng.uniform(sp["monster_offset_min"], sp["monster_offset_max"])
    side = 1.0 if s.rng.random() < 0.5 else -1.0
    s.entities.append(Entity(_new_id(s), "monster", s.x + side * off, float(sp["monster_y"])))


def _spawn_ring_monster(s: WorldState) -> None:
    r = s.task.spawn["spawn_radius"]
    grid = s.task.grid
    while True:
        a = s.rng.uniform(0.0, 2 * math.pi)
        mx, my = s.x + r * math.cos(a), s.y + r * math.sin(a)
        if _fits(grid, mx, my, 0.3):
            break
    s.entities.append(Entity(_new_id(s), "monster", mx, my, timer=0))


def _reset_defend_center(s: WorldState) -> None:
    for _ in range(s.task.spawn["monsters_alive"]):
        _spawn_ring_monster(s)
    s.counters["respawn_queue"] = 0
    s.counters["respawn_timer"] = 0
    s.counters["melee_timer"] = 0


def _reset_predict_position(s: WorldState) -> None:
    sp, pr = s.task.spawn, s.task.params
    w = s.task.grid.shape[1]
    mx = s.rng.uniform(1.5, w - 1.5)
    my = s.rng.uniform(sp["monster_y_min"], sp["monster_y_max"])
    v = pr["monster_speed"] * (1.0 if s.rng.random() < 0.5 else -1.0)
    s.entities.append(Entity(_new_id(s), "monster", mx, my, vx=v))
    s.counters["rocket_armed"] = 1


def _reset_take_cover(s: WorldState) -> None:
    sp = s.task.spawn
    for tx in sp["turret_xs"]:
        s.entities.append(Entity(_new_id(s), "monster", float(tx), float(sp["turret_y"]), owner="turret"))


def _reset_my_way_home(s: WorldState) -> None:
    gx, gy = s.task.spawn["goal"]
    s.entities.append(Entity(_new_id(s), "goal", float(gx), float(gy)))


def _spawn_medkit(s: WorldState) -> None:
    cells = _free_cells(s.task)
    r = s.task.params["pickup_radius"]
    for _ in range(100):
        i, j = cells[int(s.rng.integers(len(cells)))]
        x, y = j + 0.5, i + 0.5
        if math.hypot(x - s.x, y - s.y) > 2 * r and not any(
            e.kind == "medkit" and e.x == x and e.y == y for e in s.entities
        ):
            s.entities.append(Entity(_new_id(s), "medkit", x, y))
            return


def _reset_health_gathering(s: WorldState) -> None:
    for _ in range(s.task.spawn["medkits_initial"]):
        _spawn_medkit(s)
    s.counters["medkit_timer"] = 0


_RESET = {
    "simpler-basic": _reset_simpler_basic,
    "defend-center": _reset_defend_center,
    "predict-position": _reset_predict_position,
    "take-cover": _reset_take_cover,
    "my-way-home": _reset_my_way_home,
    "health-gathering": _reset_health_gathering,
}


# ---------------------------------------------------------------------------- step


def _hitscan(s: WorldState) -> Entity | None:
    """Nearest live monster within the hit cone, range and line of sight."""
    m = s.task.motion
    best, best_d = None, math.inf
    for e in s.monsters():
        dx, dy = e.x - s.x, e.y - s.y
        d = math.hypot(dx, dy)
        if d > m["shot_range"] or d == 0.0:
            continue
        bearing = math.degrees(math.atan2(dy, dx))
        if abs(angle_diff(bearing, s.heading)) > m["hit_cone_deg"]:
            continue
        if d < best_d and line_of_sight(s.task.grid, s.x, s.y, e.x, e.y):
            best, best_d = e, d
    return best


def step(state: WorldState, action, render_frame: bool = True):
    """Advance one tick; returns ``(new_state, observation, reward, done)``.

    The input state is left untouched.  ``new_state.truncated`` tells a
    tick-limit ending apart from a terminal outcome.
    """
    if state.done:
        raise EnvError("episode is over; call reset")
    action = Action(action)
    task = state.task
    if action not in task.actions:
        raise EnvError(f"action {action.name} not allowed in {task.task_id}; allowed: {[a.name for a in task.actions]}")
    s = state.copy()
    s.tick += 1
    m = task.motion
    if action == Action.TURN_LEFT:
        s.heading = (s.heading + m["turn_step_deg"]) % 360.0
    elif action == Action.TURN_RIGHT:
        s.heading = (s.heading - m["turn_step_deg"]) % 360.0
    elif action == Action.MOVE_FORWARD:
        _move_agent(s, s.heading)
    elif action == Action.MOVE_LEFT:
        _move_agent(s, s.heading + 90.0)
    elif action == Action.MOVE_RIGHT:
        _move_agent(s, s.heading - 90.0)
    reward = _UPDATE[task.task_id](s, action == Action.SHOOT)
    if not s.done and s.tick >= task.tick_limit:
        s.done = True
        s.truncated = True
    obs = render(s, s.resolution) if render_frame else None
    return s, obs, float(reward), s.done


def _can_fire(s: WorldState) -> bool:
    return s.ammo is None or s.ammo > 0


def _fire(s: WorldState) -> None:
    if s.ammo is not None:
        s.ammo -= 1


def _update_simpler_basic(s: WorldState, shoot: bool) -> float:
    r = s.task.rewards
    reward = r["living"]
    if shoot and _can_fire(s):
        _fire(s)
        reward += r["shot"]
        target = _hitscan(s)
        if target is not None:
            target.alive = False
            reward += r["kill"]
            s.done = True
    return reward


def _update_defend_center(s: WorldState, shoot: bool) -> float:
    r, p, sp = s.task.rewards, s.task.params, s.task.spawn
    reward = r["living"]
    if shoot and _can_fire(s):
        _fire(s)
        target = _hitscan(s)
        if target is not None:
            target.alive = False
            reward += r["kill"]
            s.counters["respawn_queue"] += 1
    attacking = False
    for e in s.monsters():
        dx, dy = s.x - e.x, s.y - e.y
        d = math.hypot(dx, dy)
        if d > p["melee_range"]:
            step_len = min(p["monster_speed"], d - p["melee_range"])
            e.x += step_len * dx / d
            e.y += step_len * dy / d
        else:
            attacking = True
    if attacking:
        s.counters["melee_timer"] += 1
        if s.counters["melee_timer"] >= p["melee_period"]:
            s.counters["melee_timer"] = 0
            s.health -= p["melee_damage"] * sum(
                1 for e in s.monsters() if math.hypot(s.x - e.x, s.y - e.y) <= p["melee_range"] + 1e-9
            )
    if s.counters["respawn_queue"] > 0:
        s.counters["respawn_timer"] += 1
        if s.counters["respawn_timer"] >= sp["respawn_delay"]:
            s.counters["respawn_timer"] = 0
            s.counters["respawn_queue"] -= 1
            _spawn_ring_monster(s)
    if s.health <= 0:
        s.health = 0
        reward += r["death"]
        s.done = True
    return reward


def _update_predict_position(s: WorldState, shoot: bool) -> float:
    r, p = s.task.rewards, s.task.params
    grid = s.task.grid
    reward = r["living"]
    monster = s.entities[0]
    if s.rng.random() < p["monster_turn_prob"]:
        monster.vx = -monster.vx
    nx = monster.x + monster.vx
    if not _fits(grid, nx, monster.y, p["monster_radius"]):
        monster.vx = -monster.vx
        nx = monster.x + monster.vx
    if _fits(grid, nx, monster.y, p["monster_radius"]):
        monster.x = nx

    if shoot and s.counters["rocket_armed"]:
        s.counters["rocket_armed"] = 0
        a = math.radians(s.heading)
        v = p["rocket_speed"]
        s.entities.append(Entity(_new_id(s), "missile", s.x, s.y, vx=v * math.cos(a), vy=v * math.sin(a), owner="agent"))

    for rocket in [e for e in s.entities if e.kind == "missile"]:
        n = int(p["rocket_substeps"])
        gone = False
        for _ in range(n):
            rx, ry = rocket.x + rocket.vx / n, rocket.y + rocket.vy / n
            if monster.alive and math.hypot(rx - monster.x, ry - monster.y) <= p["monster_radius"]:
                monster.alive = False
                reward += r["hit"]
                s.done = True
                gone = True
                break
            if is_wall(grid, rx, ry):
                gone = True
                s.counters["rocket_armed"] = 1
                break
            rocket.x, rocket.y = rx, ry
        if gone:
            s.entities.remove(rocket)
    return reward


def _update_take_cover(s: WorldState, shoot: bool) -> float:
    r, p = s.task.rewards, s.task.params
    grid = s.task.grid
    for t in [e for e in s.entities if e.owner == "turret"]:
        if s.rng.random() < p["fire_prob"]:
            aim_x = s.x + s.rng.normal(0.0, p["aim_jitter"])
            dx, dy = aim_x - t.x, s.y - t.y
            d = math.hypot(dx, dy)
            v = p["fireball_speed"]
            s.entities.append(Entity(_new_id(s), "missile", t.x, t.y, vx=v * dx / d, vy=v * dy / d, owner="fireball"))
    for fb in [e for e in s.entities if e.owner == "fireball"]:
        fx, fy = fb.x + fb.vx, fb.y + fb.vy
        if math.hypot(fx - s.x, fy - s.y) <= p["fireball_radius"] + s.task.motion["agent_radius"]:
            s.health -= p["fireball_damage"]
            s.entities.remove(fb)
        elif is_wall(grid, fx, fy):
            s.entities.remove(fb)
        else:
            fb.x, fb.y = fx, fy
    if s.health <= 0:
        s.health = 0
        s.done = True
        return 0.0
    return r["living"]


def _update_my_way_home(s: WorldState, shoot: bool) -> float:
    r = s.task.rewards
    reward = r["living"]
    goal = s.entities[0]
    if math.hypot(goal.x - s.x, goal.y - s.y) <= s.task.params["goal_radius"]:
        reward += r["goal"]
        s.done = True
    return reward


def _update_health_gathering(s: WorldState, shoot: bool) -> float:
    r, p, sp = s.task.rewards, s.task.params, s.task.spawn
    for e in [e for e in s.entities if e.kind == "medkit"]:
        if math.hypot(e.x - s.x, e.y - s.y) <= p["pickup_radius"]:
            s.health = min(p["max_health"], s.health + p["medkit_health"])
            s.entities.remove(e)
    if s.tick % p["drain_period"] == 0:
        s.health -= p["drain_amount"]
    s.counters["medkit_timer"] += 1
    if s.counters["medkit_timer"] >= sp["medkit_period"]:
        s.counters["medkit_timer"] = 0
        if sum(1 for e in s.entities if e.kind == "medkit") < sp["medkits_max"]:
            _spawn_medkit(s)
    if s.health <= 0:
        s.health = 0
        s.done = True
        return 0.0
    return r["living"]


_UPDATE = {
    "simpler-basic": _update_simpler_basic,
    "defend-center": _update_defend_center,
    "predict-position": _update_predict_position,
    "take-cover": _update_take_cover,
    "my-way-home": _update_my_way_home,
    "health-gathering": _update_health_gathering,
}
