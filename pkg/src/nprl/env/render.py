"""Column raycaster with flat-colored billboard sprites."""
from __future__ import annotations

import math

import numpy as np

# fixed 8-entry palette (RGB)
PALETTE = {
    "ceiling": (40, 40, 60),
    "floor": (90, 80, 70),
    "wall_x": (170, 170, 170),
    "wall_y": (120, 120, 120),
    "monster": (200, 30, 30),
    "missile": (250, 160, 20),
    "medkit": (30, 200, 60),
    "goal": (40, 90, 230),
}
SPRITE_SIZE = {"monster": 0.8, "missile": 0.25, "medkit": 0.4, "goal": 0.6}

_CEIL = np.array(PALETTE["ceiling"], np.uint8)
_FLOOR = np.array(PALETTE["floor"], np.uint8)
_WALL_X = np.array(PALETTE["wall_x"], np.uint8)
_WALL_Y = np.array(PALETTE["wall_y"], np.uint8)


def cast_rays(grid: np.ndarray, px: float, py: float, heading_deg: float, width: int, fov_deg: float = 90.0):
    """DDA against the occupancy grid, one ray per column.

    Returns perpendicular wall distance, hit side (0: x-side, 1: y-side) and
    the fractional hit coordinate along the wall, each of length ``width``.
    """
    h = math.radians(heading_deg)
    dx, dy = math.cos(h), math.sin(h)
    half = math.tan(math.radians(fov_deg) / 2.0)
    rx, ry = math.sin(h) * half, -math.cos(h) * half  # camera plane points to screen-right
    cam = 2.0 * (np.arange(width) + 0.5) / width - 1.0
    ray_x = dx + rx * cam
    ray_y = dy + ry * cam

    with np.errstate(divide="ignore"):
        delta_x = np.where(ray_x == 0, np.inf, np.abs(1.0 / ray_x))
        delta_y = np.where(ray_y == 0, np.inf, np.abs(1.0 / ray_y))
    map_x = np.full(width, math.floor(px), np.int64)
    map_y = np.full(width, math.floor(py), np.int64)
    step_x = np.where(ray_x < 0, -1, 1)
    step_y = np.where(ray_y < 0, -1, 1)
    fx, fy = px - math.floor(px), py - math.floor(py)
    side_x = np.where(ray_x < 0, fx, 1.0 - fx) * delta_x
    side_y = np.where(ray_y < 0, fy, 1.0 - fy) * delta_y

    hit = np.zeros(width, bool)
    side = np.zeros(width, np.int8)
    rows, cols = grid.shape
    for _ in range(rows + cols + 2):
        active = ~hit
        if not active.any():
            break
        go_x = active & (side_x < side_y)
        go_y = active & ~go_x
        side_x = np.where(go_x, side_x + delta_x, side_x)
        map_x = np.where(go_x, map_x + step_x, map_x)
        side_y = np.where(go_y, side_y + delta_y, side_y)
        map_y = np.where(go_y, map_y + step_y, map_y)
        side = np.where(go_x, 0, np.where(go_y, 1, side))
        inside = (map_x >= 0) & (map_x < cols) & (map_y >= 0) & (map_y < rows)
        hit |= active & (~inside | grid[np.clip(map_y, 0, rows - 1), np.clip(map_x, 0, cols - 1)])
    with np.errstate(invalid="ignore"):  # inf - inf only on the branch not taken
        dist = np.where(side == 0, side_x - delta_x, side_y - delta_y)
    dist = np.maximum(dist, 1e-6)
    along = np.where(side == 0, py + dist * ray_y, px + dist * ray_x)
    return dist, side, along - np.floor(along)


def render(state, resolution: int = 128) -> np.ndarray:
    """RGB uint8 frame (resolution x resolution x 3) of the agent's view."""
    task = state.task
    w = h = resolution
    fov = float(task.render.get("fov_deg", 90.0))
    textured = bool(task.render.get("textures", False))
    dist, side, along = cast_rays(task.grid, state.x, state.y, state.heading, w, fov)

    img = np.empty((h, w, 3), np.uint8)
    img[: h // 2] = _CEIL
    img[h // 2:] = _FLOOR

    # wall of unit height at perpendicular distance d spans h / d rows
    line = np.minimum(np.rint(h / dist), 4 * h).astype(np.int64)
    top = (h - line) // 2
    bottom = top + line
    ys = np.arange(h)[:, None]
    mask = (ys >= top[None, :]) & (ys < bottom[None, :])
    shade = side.astype(bool)
    if textured:
        shade = shade ^ (np.floor(along * 4).astype(np.int64) % 2 == 1)
    colors = np.where(shade[:, None], _WALL_Y[None, :], _WALL_X[None, :])
    img[mask] = np.broadcast_to(colors[None, :, :], (h, w, 3))[mask]

    _draw_sprites(img, state, dist, fov)
    return img


def _draw_sprites(img: np.ndarray, state, zbuf: np.ndarray, fov: float) -> None:
    h, w, _ = img.shape
    hd = math.radians(state.heading)
    dx, dy = math.cos(hd), math.sin(hd)
    rx, ry = math.sin(hd), -math.cos(hd)
    half = math.tan(math.radians(fov) / 2.0)
    items = []
    for e in state.entities:
        if not e.alive:
            continue
        ox, oy = e.x - state.x, e.y - state.y
        depth = ox * dx + oy * dy
        if depth <= 0.1:
            continue
        lateral = ox * rx + oy * ry
        items.append((depth, lateral, e))
    # painter's order: far first
    items.sort(key=lambda t: (-t[0], t[2].eid))
    cols = np.arange(w)
    for depth, lateral, e in items:
        size = SPRITE_SIZE[e.kind]
        cx = 0.5 * w * (1.0 + lateral / (depth * half))
        span = w * size / (2.0 * half * depth)
        x0 = int(math.floor(cx - span / 2.0))
        x1 = int(math.ceil(cx + span / 2.0))
        if x1 <= 0 or x0 >= w:
            continue
        sh = h * size / depth
        if e.kind == "missile":
            y0 = int(round(h / 2.0 - sh / 2.0))
        else:
            floor_row = h / 2.0 + h / (2.0 * depth)
            y0 = int(round(floor_row - sh))
        y1 = int(round(y0 + sh))
        y0c, y1c = max(y0, 0), min(max(y1, y0 + 1), h)
        x0c, x1c = max(x0, 0), min(x1, w)
        visible = cols[x0c:x1c][zbuf[x0c:x1c] > depth]
        if visible.size == 0 or y1c <= y0c:
            continue
        img[y0c:y1c, visible] = np.array(PALETTE[e.kind], np.uint8)
