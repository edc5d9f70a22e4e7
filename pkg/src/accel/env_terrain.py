"""Walker terrain genotype, editing, difficulty categories and a kinematic runner.

The runner is a deliberately small stand-in for a physics walker.  It moves
along a 1D course at speed ``v`` and must clear the obstacles rendered from the
genotype.  Passability is a fixed function of speed and hop effort:

* stump / stair rise of height ``s`` passes iff ``s <= 0.3 + hop * (1.5 + 1.5 v)``
* pit of width ``g`` passes iff ``g <= 0.5 + v * (1.5 + 5.5 hop)``
* moving faster than ``1 - roughness / 15`` on rough ground is a fall

so raising any genotype parameter can only make a level harder.  Failing a check
ends the episode with the fall penalty.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from accel.core import (
    TERRAIN,
    TERRAIN_FIELDS_5D,
    TERRAIN_FIELDS_8D,
    TERRAIN_MAX,
    TERRAIN_RANGES,
    Level,
    TerrainPayload,
)

COURSE_LENGTH = 100.0
START_ZONE = 10.0
SLOT_SPACING = 10.0
DX = 0.5
MAX_STEPS = 2000
FALL_PENALTY = -100.0
STEP_COST = 0.05
HOP_COST = 0.3
MAX_SPEED = 1.0
ACCEL = 0.25
PROGRESS_SCALE = 300.0 / COURSE_LENGTH
OBS_DIM = 10
ACTION_DIM = 2

EDIT_SIZE = {
    "stump_low": 0.2,
    "stump_high": 0.2,
    "stair_low": 0.2,
    "stair_high": 0.2,
    "stair_steps": 1,
    "roughness": None,  # Unif(0, 0.6) magnitude per edit
    "pit_low": 0.4,
    "pit_high": 0.4,
}
ROUGHNESS_EDIT = 0.6

STUMP_THRESHOLD = 2.4
PIT_THRESHOLD = 6.0
ROUGHNESS_THRESHOLD = 4.5


class DifficultyCategory(enum.IntEnum):
    EASY = 0
    CHALLENGING = 1
    VERY_CHALLENGING = 2
    EXTREMELY_CHALLENGING = 3


def _check(level: Level) -> TerrainPayload:
    if level.kind != TERRAIN:
        raise ValueError(f"expected a terrain level, got {level.kind!r}")
    return level.payload


def categorize(level: Level) -> DifficultyCategory:
    p = _check(level)
    met = (p.stump_high >= STUMP_THRESHOLD) + (p.pit_high >= PIT_THRESHOLD) + (p.roughness >= ROUGHNESS_THRESHOLD)
    return DifficultyCategory(int(met))


# -- generators and editing --------------------------------------------------


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31))


def terrain_easy_init(rng: np.random.Generator, mode: int = 5, level_id: int = 0) -> Level:
    """Simple starting terrain: small stumps, stairs and pits, one step, light roughness."""
    rough = float(rng.uniform(0.0, 0.6))
    if mode == 8:
        p = TerrainPayload(0.0, 0.4, 0.0, 0.4, 1, rough, 0.0, 0.8, mode=8, seed=_seed(rng))
    else:
        p = TerrainPayload(stump_high=0.4, stair_high=0.4, stair_steps=1, roughness=rough, pit_high=0.8,
                           mode=5, seed=_seed(rng))
    return Level(TERRAIN, p, level_id)


def terrain_sample_dr(rng: np.random.Generator, mode: int = 5, level_id: int = 0) -> Level:
    """Every parameter uniform on [0, max]; range pairs sorted so low <= high."""
    names = TERRAIN_FIELDS_5D if mode == 5 else TERRAIN_FIELDS_8D
    values = {}
    for name in names:
        if name == "stair_steps":
            values[name] = int(rng.integers(0, TERRAIN_MAX[name] + 1))
        else:
            values[name] = float(rng.uniform(0.0, TERRAIN_MAX[name]))
    if mode == 8:
        for lo, hi in TERRAIN_RANGES:
            a, b = sorted((values[lo], values[hi]))
            values[lo], values[hi] = a, b
    return Level(TERRAIN, TerrainPayload(mode=mode, seed=_seed(rng), **values), level_id)


def _sorted_ranges(values: dict) -> dict:
    for lo, hi in TERRAIN_RANGES:
        if values[lo] > values[hi]:
            values[lo], values[hi] = values[hi], values[lo]
    return values


def apply_terrain_edit(level: Level, name: str, delta: float, child_id: int = 0) -> Level:
    """Add ``delta`` to one parameter, clamp to [0, max] and re-sort range pairs."""
    p = _check(level)
    if name not in p.fields:
        raise ValueError(f"{name} is not a parameter of the {p.mode}D encoding")
    values = {f: getattr(p, f) for f in TERRAIN_FIELDS_8D}
    v = min(max(values[name] + delta, 0.0), TERRAIN_MAX[name])
    values[name] = int(round(v)) if name == "stair_steps" else float(v)
    return level.child(replace(p, **_sorted_ranges(values)), child_id)


def terrain_edit(level: Level, rng: np.random.Generator, child_id: int = 0) -> Level:
    """Random single-parameter edit.

    The sign is a coin flip, except that a step which the clamp would turn into a
    no-op goes the other way, so every edit changes exactly one parameter.
    """
    p = _check(level)
    names = p.fields
    name = names[int(rng.integers(len(names)))]
    size = EDIT_SIZE[name]
    if size is None:
        size = float(rng.uniform(0.0, ROUGHNESS_EDIT))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    current = getattr(p, name)
    if (sign > 0 and current >= TERRAIN_MAX[name]) or (sign < 0 and current <= 0.0):
        sign = -sign
    return apply_terrain_edit(level, name, sign * size, child_id)


# -- course rendering --------------------------------------------------------

STUMP, PIT, STAIR = "stump", "pit", "stair"
OBSTACLE_TYPES = (STUMP, PIT, STAIR)


@dataclass(frozen=True)
class Obstacle:
    x: float
    kind: str
    size: float  # stump height, pit width or stair rise
    direction: int = 1  # stairs: +1 up, -1 down


@dataclass(frozen=True)
class Course:
    obstacles: tuple[Obstacle, ...]
    heights: np.ndarray
    roughness: float


def _rng_for(p: TerrainPayload) -> np.random.Generator:
    return np.random.default_rng(0 if p.seed is None else p.seed)


@functools.lru_cache(maxsize=2048)
def build_course(p: TerrainPayload) -> Course:
    """Obstacle list and heightfield; a pure function of (genotype, seed)."""
    rng = _rng_for(p)
    enabled = []
    if p.stump_high > 0:
        enabled.append(STUMP)
    if p.pit_high > 0:
        enabled.append(PIT)
    if p.stair_steps > 0 and p.stair_high > 0:
        enabled.append(STAIR)
    obstacles = []
    slot = START_ZONE
    while slot < COURSE_LENGTH - SLOT_SPACING / 2:
        if enabled:
            kind = enabled[int(rng.integers(len(enabled)))]
            if kind == STUMP:
                obstacles.append(Obstacle(slot, STUMP, float(rng.uniform(p.stump_low, p.stump_high))))
            elif kind == PIT:
                obstacles.append(Obstacle(slot, PIT, float(rng.uniform(p.pit_low, p.pit_high))))
            else:
                direction = 1 if rng.random() < 0.5 else -1
                for k in range(int(p.stair_steps)):
                    rise = float(rng.uniform(p.stair_low, p.stair_high))
                    obstacles.append(Obstacle(slot + k, STAIR, rise, direction))
        slot += SLOT_SPACING

    xs = np.arange(0.0, COURSE_LENGTH + DX, DX)
    noise = rng.standard_normal(len(xs))
    kernel = np.ones(5) / 5.0
    heights = np.convolve(noise, kernel, mode="same") * (p.roughness * 0.1)
    level_offset = np.zeros_like(xs)
    for ob in obstacles:
        if ob.kind == STAIR:
            level_offset[xs >= ob.x] += ob.direction * ob.size
        elif ob.kind == STUMP:
            heights[(xs >= ob.x) & (xs < ob.x + 1.0)] += ob.size
        else:
            heights[(xs >= ob.x) & (xs < ob.x + ob.size)] = -10.0
    heights = heights + level_offset
    return Course(tuple(obstacles), heights, float(p.roughness))


def heightfield(level: Level) -> tuple[np.ndarray, np.ndarray]:
    """(x, height) samples of the rendered course."""
    course = build_course(_check(level))
    xs = np.arange(len(course.heights)) * DX
    return xs, course.heights.copy()


def heightfield_csv(level: Level) -> str:
    xs, hs = heightfield(level)
    lines = ["x,height"] + [f"{x:.2f},{h:.6f}" for x, h in zip(xs, hs)]
    return "\n".join(lines) + "\n"


# -- dynamics ----------------------------------------------------------------


@dataclass(frozen=True)
class TerrainState:
    level: Level
    x: float = 0.0
    v: float = 0.0
    airborne: bool = False
    t: int = 0
    done: bool = False
    success: bool = False
    max_steps: int = MAX_STEPS


def safe_speed(roughness: float) -> float:
    return MAX_SPEED * (1.0 - roughness / 15.0)


def hop_clearance(v: float, hop: float) -> float:
    return 0.3 + hop * (1.5 + 1.5 * v)


def jump_length(v: float, hop: float) -> float:
    return 0.5 + v * (1.5 + 5.5 * hop)


def _next_obstacle(course: Course, x: float) -> Optional[Obstacle]:
    for ob in course.obstacles:
        if ob.x > x:
            return ob
    return None


def observe(state: TerrainState) -> np.ndarray:
    """Local lookahead only: no course coordinates are exposed."""
    course = build_course(state.level.payload)
    ob = _next_obstacle(course, state.x)
    obs = np.zeros(OBS_DIM)
    obs[0] = state.v / MAX_SPEED
    obs[1] = float(state.airborne)
    obs[2] = course.roughness / 10.0
    obs[3] = safe_speed(course.roughness)
    if ob is None:
        obs[4] = 1.0
        obs[8] = 1.0
    else:
        obs[4] = min(ob.x - state.x, SLOT_SPACING) / SLOT_SPACING
        obs[5 + OBSTACLE_TYPES.index(ob.kind)] = 1.0
        obs[9] = ob.size / 10.0
    return obs


def terrain_reset(level: Level, rng=None, max_steps: int = MAX_STEPS):
    _check(level)
    state = TerrainState(level, max_steps=max_steps)
    return state, observe(state)


def terrain_step(state: TerrainState, action):
    """Returns (state', observation, reward, done)."""
    if state.done:
        raise RuntimeError("cannot step a finished episode")
    a = np.asarray(action, dtype=np.float64).ravel()
    if a.shape != (ACTION_DIM,):
        raise ValueError(f"terrain action must have {ACTION_DIM} components, got {a.shape}")
    thrust, hop = float(np.clip(a[0], -1, 1)), float(np.clip(a[1], 0, 1))
    course = build_course(state.level.payload)
    v = min(max(state.v + ACCEL * thrust, 0.0), MAX_SPEED)
    x0, x1 = state.x, min(state.x + v, COURSE_LENGTH)
    t = state.t + 1
    reward = (x1 - x0) * PROGRESS_SCALE - STEP_COST - HOP_COST * hop
    fell = v > safe_speed(course.roughness) + 1e-12
    if not fell:
        for ob in course.obstacles:
            if x0 < ob.x <= x1:
                if ob.kind == PIT:
                    ok = ob.size <= jump_length(v, hop)
                else:
                    ok = ob.size <= hop_clearance(v, hop)
                if not ok:
                    fell = True
                    break
    done = success = False
    if fell:
        reward += FALL_PENALTY
        done = True
    elif x1 >= COURSE_LENGTH:
        done = success = True
    if t >= state.max_steps:
        done = True
    new = TerrainState(state.level, x1, v, hop > 0.5, t, done, success, state.max_steps)
    return new, observe(new), reward, done
