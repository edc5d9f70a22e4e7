"""Lava grid and partially observable maze: dynamics, generators, editors, metrics.

Both grids share a payload (see ``core.GridPayload``).  The maze agent turns and
moves forward one cell at a time and sees a 7x7 forward-facing crop; the lava
agent moves in eight directions and sees the whole grid.
"""

from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from accel.core import (
    EMPTY,
    GRID_KINDS,
    LAVA,
    LAVA_TILE,
    MAZE,
    WALL,
    GridPayload,
    Level,
    LevelValidationError,
)

DEFAULT_MAX_STEPS = 250
STEP_PENALTY = 0.01
VIEW = 7

# MiniGrid direction vectors, indexed by facing (0=E, 1=S, 2=W, 3=N).
DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))
MOVES_8 = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

TURN_LEFT, TURN_RIGHT, FORWARD = 0, 1, 2
N_ACTIONS = {MAZE: 3, LAVA: 8}

# Tile codes used in observations.
T_EMPTY, T_WALL, T_GOAL, T_LAVA = 0, 1, 2, 3
N_TILE_CODES = 4


@dataclass(frozen=True)
class GridState:
    level: Level
    pos: int
    facing: int
    t: int = 0
    done: bool = False
    success: bool = False
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass(frozen=True)
class GridDRConfig:
    width: int
    height: int
    min_obstacles: int = 0
    max_obstacles: int = 0
    randomize_facing: bool = True


LAVA_DR = GridDRConfig(7, 7, 0, 20, randomize_facing=False)
MAZE_DR = GridDRConfig(15, 15, 0, 60)


@dataclass(frozen=True)
class GridComplexity:
    obstacle_count: int
    shortest_path: Optional[int]
    solvable: bool


def _check_kind(level: Level) -> GridPayload:
    if level.kind not in GRID_KINDS:
        raise ValueError(f"expected a grid level, got {level.kind!r}")
    return level.payload


# -- observations ------------------------------------------------------------


@functools.lru_cache(maxsize=4096)
def _lava_tile_onehot(p: GridPayload) -> np.ndarray:
    n = p.width * p.height
    out = np.zeros((3, n), dtype=np.int8)
    for i, c in enumerate(p.cells):
        out[1 if c == LAVA_TILE else 0, i] = 1
    out[0, p.goal] = 0
    out[2, p.goal] = 1
    return out.ravel()


def _tile_code(p: GridPayload, x: int, y: int) -> int:
    if not (0 <= x < p.width and 0 <= y < p.height):
        return T_WALL
    i = y * p.width + x
    if i == p.goal:
        return T_GOAL
    c = p.cells[i]
    if c == WALL:
        return T_WALL
    if c == LAVA_TILE:
        return T_LAVA
    return T_EMPTY


def maze_crop(p: GridPayload, pos: int, facing: int) -> np.ndarray:
    """7x7x3 view: row 0 is farthest ahead, the agent sits at row 6, column 3."""
    crop = np.zeros((VIEW, VIEW, 3), dtype=np.int8)
    ax, ay = pos % p.width, pos // p.width
    fx, fy = DIRS[facing]
    rx, ry = DIRS[(facing + 1) % 4]
    half = VIEW // 2
    for row in range(VIEW):
        ahead = VIEW - 1 - row
        for col in range(VIEW):
            side = col - half
            crop[row, col, 0] = _tile_code(p, ax + ahead * fx + side * rx, ay + ahead * fy + side * ry)
    return crop


def lava_crop(p: GridPayload, pos: int) -> np.ndarray:
    """Agent-centred view large enough to hold the whole grid from any cell.

    Channels: lava, goal.  Shape (2H-1, 2W-1, 2); cells outside the grid are zero.
    """
    ax, ay = pos % p.width, pos // p.width
    rh, rw = p.height - 1, p.width - 1
    crop = np.zeros((2 * rh + 1, 2 * rw + 1, 2), dtype=np.int8)
    tiles = _lava_tile_onehot(p).reshape(3, p.height, p.width)
    y0, x0 = rh - ay, rw - ax
    crop[y0:y0 + p.height, x0:x0 + p.width, 0] = tiles[1]
    crop[y0:y0 + p.height, x0:x0 + p.width, 1] = tiles[2]
    return crop


def observe(state: GridState) -> np.ndarray:
    """Flat integer observation.

    maze: 147 crop values followed by a 4-way facing one-hot.
    lava: global one-hot tile map (empty, lava, goal), an agent-position
    one-hot, the agent-centred crop from ``lava_crop``, then the agent and
    goal coordinates (x, y, x, y).
    """
    p = state.level.payload
    if state.level.kind == MAZE:
        facing = np.zeros(4, dtype=np.int8)
        facing[state.facing] = 1
        return np.concatenate([maze_crop(p, state.pos, state.facing).ravel(), facing])
    agent = np.zeros(p.width * p.height, dtype=np.int8)
    agent[state.pos] = 1
    coords = np.array([*p.xy(state.pos), *p.xy(p.goal)], dtype=np.int8)
    return np.concatenate([_lava_tile_onehot(p), agent, lava_crop(p, state.pos).ravel(), coords])


def features(obs: np.ndarray, kind: str, width: int = 7, height: int = 7) -> np.ndarray:
    """Network input for an observation.

    The maze crop's tile channel is one-hot encoded.  For lava the dense
    "empty" channel of the global map is dropped (it is implied by the other
    two) and coordinates are scaled to [0, 1]; with Adam, dozens of
    always-on inputs turn every update into a large shift of the hidden layer.
    """
    if kind == MAZE:
        tiles = obs[: VIEW * VIEW * 3 : 3].astype(np.intp)
        onehot = np.zeros((VIEW * VIEW, N_TILE_CODES), dtype=np.float64)
        onehot[np.arange(VIEW * VIEW), tiles] = 1.0
        return np.concatenate([onehot.ravel(), obs[VIEW * VIEW * 3:].astype(np.float64)])
    out = obs[width * height:].astype(np.float64)
    out[-4:] /= np.array([width - 1, height - 1, width - 1, height - 1], dtype=np.float64)
    return out


def feature_dim(kind: str, width: int = 7, height: int = 7) -> int:
    if kind == MAZE:
        return VIEW * VIEW * N_TILE_CODES + 4
    return 3 * width * height + 2 * (2 * width - 1) * (2 * height - 1) + 4


# -- dynamics ----------------------------------------------------------------


def grid_reset(level: Level, rng=None, max_steps: int = DEFAULT_MAX_STEPS):
    """Start an episode at the level's agent start.  Returns (state, observation)."""
    p = _check_kind(level)
    state = GridState(level, p.agent, p.facing, 0, False, False, max_steps)
    return state, observe(state)


def grid_step(state: GridState, action: int):
    """Advance one step.  Returns (state', observation, reward, done)."""
    if state.done:
        raise RuntimeError("cannot step a finished episode")
    level = state.level
    p = level.payload
    n_actions = N_ACTIONS[level.kind]
    if not (isinstance(action, (int, np.integer)) and 0 <= action < n_actions):
        raise ValueError(f"invalid action {action!r} for {level.kind}")
    action = int(action)
    t = state.t + 1
    pos, facing = state.pos, state.facing
    reward = 0.0
    done = success = False
    x, y = pos % p.width, pos // p.width

    if level.kind == MAZE:
        if action == TURN_LEFT:
            facing = (facing - 1) % 4
        elif action == TURN_RIGHT:
            facing = (facing + 1) % 4
        else:
            dx, dy = DIRS[facing]
            nx, ny = x + dx, y + dy
            if 0 <= nx < p.width and 0 <= ny < p.height:
                j = ny * p.width + nx
                if p.cells[j] != WALL:
                    pos = j
        if pos == p.goal:
            reward = 1.0 - t / state.max_steps
            done = success = True
    else:
        reward = -STEP_PENALTY
        dx, dy = MOVES_8[action]
        nx, ny = x + dx, y + dy
        if 0 <= nx < p.width and 0 <= ny < p.height:
            j = ny * p.width + nx
            if p.cells[j] != WALL:
                pos = j
        if p.cells[pos] == LAVA_TILE:
            done = True
        elif pos == p.goal:
            reward += 1.0
            done = success = True

    if t >= state.max_steps:
        done = True
    new = GridState(level, pos, facing, t, done, success, state.max_steps)
    return new, observe(new), reward, done


# -- metrics -----------------------------------------------------------------


def _neighbours(p: GridPayload, kind: str):
    moves = MOVES_8 if kind == LAVA else DIRS
    w, h = p.width, p.height
    cells = p.cells

    def nbrs(i: int) -> Iterable[int]:
        x, y = i % w, i // w
        for dx, dy in moves:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h:
                j = ny * w + nx
                if cells[j] == EMPTY:
                    yield j

    return nbrs


def shortest_path_length(level: Level) -> Optional[int]:
    """BFS moves from agent start to goal; None when the goal is unreachable."""
    p = _check_kind(level)
    nbrs = _neighbours(p, level.kind)
    dist = {p.agent: 0}
    queue = deque([p.agent])
    while queue:
        i = queue.popleft()
        if i == p.goal:
            return dist[i]
        for j in nbrs(i):
            if j not in dist:
                dist[j] = dist[i] + 1
                queue.append(j)
    return None


def grid_complexity(level: Level) -> GridComplexity:
    p = _check_kind(level)
    sp = shortest_path_length(level)
    return GridComplexity(p.obstacle_count, sp, sp is not None)


# -- generators --------------------------------------------------------------


def _obstacle_char(kind: str) -> str:
    return LAVA_TILE if kind == LAVA else WALL


def grid_sample_dr(rng: np.random.Generator, kind: str, config: GridDRConfig, level_id: int = 0) -> Level:
    """Domain-randomized level: place a uniformly drawn number of obstacles, then goal, then agent.

    Obstacles landing on an occupied cell are no-ops, so the realized count can be
    lower than the drawn one.
    """
    if kind not in GRID_KINDS:
        raise ValueError(f"not a grid kind: {kind!r}")
    n = config.width * config.height
    lo, hi = config.min_obstacles, config.max_obstacles
    if lo < 0 or hi < lo:
        raise ValueError(f"bad obstacle range [{lo}, {hi}]")
    if hi > n - 2:
        raise ValueError(f"obstacle range [{lo}, {hi}] exceeds the {n - 2} placeable cells")
    cells = [EMPTY] * n
    obstacle = _obstacle_char(kind)
    for _ in range(int(rng.integers(lo, hi + 1))):
        cells[int(rng.integers(n))] = obstacle
    free = [i for i in range(n) if cells[i] == EMPTY]
    goal = free.pop(int(rng.integers(len(free))))
    agent = free[int(rng.integers(len(free)))]
    facing = int(rng.integers(4)) if config.randomize_facing else 0
    payload = GridPayload(config.width, config.height, "".join(cells), agent, goal, facing)
    return Level(kind, payload, level_id)


def empty_room(rng: np.random.Generator, kind: str, width: int, height: int, level_id: int = 0) -> Level:
    """Obstacle-free room with random agent and goal cells (ACCEL's simple starting point)."""
    cfg = GridDRConfig(width, height, 0, 0, randomize_facing=(kind == MAZE))
    return grid_sample_dr(rng, kind, cfg, level_id)


def perfect_maze(rng: np.random.Generator, width: int, height: int, level_id: int = 0) -> Level:
    """Recursive-backtracker maze over odd cells: the corridor graph is a spanning tree."""
    if width % 2 == 0 or height % 2 == 0 or width < 5 or height < 5:
        raise ValueError(f"perfect maze needs odd dimensions >= 5, got {width}x{height}")
    cells = [WALL] * (width * height)
    nodes = [(x, y) for y in range(1, height, 2) for x in range(1, width, 2)]
    start = nodes[int(rng.integers(len(nodes)))]
    cells[start[1] * width + start[0]] = EMPTY
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack[-1]
        options = [
            (x + 2 * dx, y + 2 * dy, dx, dy)
            for dx, dy in DIRS
            if 0 < x + 2 * dx < width and 0 < y + 2 * dy < height and (x + 2 * dx, y + 2 * dy) not in seen
        ]
        if not options:
            stack.pop()
            continue
        nx, ny, dx, dy = options[int(rng.integers(len(options)))]
        cells[(y + dy) * width + x + dx] = EMPTY
        cells[ny * width + nx] = EMPTY
        seen.add((nx, ny))
        stack.append((nx, ny))
    corridor = [i for i, c in enumerate(cells) if c == EMPTY]
    a, g = rng.choice(len(corridor), size=2, replace=False)
    payload = GridPayload(width, height, "".join(cells), corridor[int(a)], corridor[int(g)], int(rng.integers(4)))
    return Level(MAZE, payload, level_id)


# -- editing -----------------------------------------------------------------

TOGGLE, MOVE_GOAL = "toggle", "move-goal"


def apply_grid_edits(level: Level, edits, rng: np.random.Generator, child_id: int = 0) -> Level:
    """Apply explicit ``(op, cell)`` edits, then relocate a displaced goal and agent.

    An obstacle toggled onto the agent or goal covers it; the covered marker is put
    back on a random empty cell once all edits are applied.
    """
    p = _check_kind(level)
    cells = list(p.cells)
    obstacle = _obstacle_char(level.kind)
    agent: Optional[int] = p.agent
    goal: Optional[int] = p.goal
    for op, cell in edits:
        if op == TOGGLE:
            if cells[cell] == EMPTY:
                cells[cell] = obstacle
                if cell == agent:
                    agent = None
                elif cell == goal:
                    goal = None
            else:
                cells[cell] = EMPTY
        elif op == MOVE_GOAL:
            if level.kind != MAZE:
                raise ValueError("goal moves are maze-only")
            if cells[cell] == EMPTY and cell != agent:
                goal = cell
        else:
            raise ValueError(f"unknown edit op {op!r}")

    def relocate(avoid: Optional[int], home: int) -> int:
        free = [i for i, c in enumerate(cells) if c == EMPTY and i != avoid]
        if not free:
            cells[home] = EMPTY
            return home
        return free[int(rng.integers(len(free)))]

    if goal is None:
        goal = relocate(agent, p.goal)
    if agent is None:
        agent = relocate(goal, p.agent)
    payload = replace(p, cells="".join(cells), agent=agent, goal=goal)
    return level.child(payload, child_id)


def grid_edit(level: Level, rng: np.random.Generator, n_edits: int = 5, child_id: int = 0) -> Level:
    """Random edit: ``n_edits`` primitive mutations (obstacle toggles; goal moves on mazes)."""
    p = _check_kind(level)
    if n_edits < 1:
        raise ValueError("n_edits must be >= 1")
    ops = (TOGGLE, MOVE_GOAL) if level.kind == MAZE else (TOGGLE,)
    n = p.width * p.height
    edits = []
    for _ in range(n_edits):
        op = ops[int(rng.integers(len(ops)))]
        edits.append((op, int(rng.integers(n))))
    return apply_grid_edits(level, edits, rng, child_id)


def render(level: Level) -> str:
    return "\n".join(_check_kind(level).rows())


def parse_art(kind: str, rows: list[str], facing: int = 0, level_id: int = 0) -> Level:
    """Build a level from text-art rows using the codec's tile characters."""
    if not rows or len({len(r) for r in rows}) != 1:
        raise LevelValidationError("rows must be non-empty and of equal length")
    chars = "".join(rows)
    if chars.count("A") != 1 or chars.count("G") != 1:
        raise LevelValidationError("art needs exactly one 'A' and one 'G'")
    payload = GridPayload(
        len(rows[0]), len(rows), chars.replace("A", EMPTY).replace("G", EMPTY),
        chars.index("A"), chars.index("G"), facing,
    )
    return Level(kind, payload, level_id)
