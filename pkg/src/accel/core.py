"""Shared domain types, the level text codec and seeded random streams.

A level line looks like::

    maze-grid;7;-;0;A........G

i.e. ``<kind>;<id>;<parent_id|->;<generation>;<payload>``.  Grid payloads are
row-major tile characters with the agent (``A``) and goal (``G``) overlaid,
optionally followed by ``:<facing>`` (one of ``ESWN``, omitted when ``E``) and
``:<W>x<H>`` (omitted for square grids).  Terrain payloads are the genotype as
comma-separated decimals, optionally followed by ``:<seed>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

LAVA = "lava-grid"
MAZE = "maze-grid"
TERRAIN = "terrain"
KINDS = (LAVA, MAZE, TERRAIN)
GRID_KINDS = (LAVA, MAZE)

EMPTY, WALL, LAVA_TILE = ".", "#", "L"
AGENT_CHAR, GOAL_CHAR = "A", "G"
FACINGS = "ESWN"  # 0=E, 1=S, 2=W, 3=N

# Table order of the 8D genotype and the per-parameter maximum.
TERRAIN_FIELDS_8D = (
    "stump_low",
    "stump_high",
    "stair_low",
    "stair_high",
    "stair_steps",
    "roughness",
    "pit_low",
    "pit_high",
)
TERRAIN_FIELDS_5D = ("stump_high", "pit_high", "roughness", "stair_high", "stair_steps")
TERRAIN_MAX = {
    "stump_low": 5.0,
    "stump_high": 5.0,
    "stair_low": 5.0,
    "stair_high": 5.0,
    "stair_steps": 9,
    "roughness": 10.0,
    "pit_low": 10.0,
    "pit_high": 10.0,
}
TERRAIN_RANGES = (("stump_low", "stump_high"), ("stair_low", "stair_high"), ("pit_low", "pit_high"))


class LevelError(ValueError):
    """Base class for level codec and validation failures."""


class LevelParseError(LevelError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class LevelValidationError(LevelError):
    pass


@dataclass(frozen=True)
class GridPayload:
    """Row-major tile layout plus agent start (cell + facing) and goal cell."""

    width: int
    height: int
    cells: str
    agent: int
    goal: int
    facing: int = 0

    def xy(self, index: int) -> tuple[int, int]:
        return index % self.width, index // self.width

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def rows(self) -> list[str]:
        chars = list(self.cells)
        chars[self.agent] = AGENT_CHAR
        chars[self.goal] = GOAL_CHAR
        w = self.width
        return ["".join(chars[r * w:(r + 1) * w]) for r in range(self.height)]

    def validate(self, kind: str) -> None:
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise LevelValidationError(f"grid too small: {self.width}x{self.height}")
        if len(self.cells) != self.width * self.height:
            raise LevelValidationError(
                f"cell count {len(self.cells)} != {self.width}x{self.height}"
            )
        bad = set(self.cells) - {EMPTY, WALL, LAVA_TILE}
        if bad:
            raise LevelValidationError(f"unknown tile characters {sorted(bad)}")
        if kind == LAVA and WALL in self.cells:
            raise LevelValidationError("lava grid contains wall tiles")
        if kind == MAZE and LAVA_TILE in self.cells:
            raise LevelValidationError("maze grid contains lava tiles")
        n = len(self.cells)
        for name, idx in (("agent", self.agent), ("goal", self.goal)):
            if not 0 <= idx < n:
                raise LevelValidationError(f"{name} index {idx} outside grid")
            if self.cells[idx] != EMPTY:
                raise LevelValidationError(f"{name} start overlaps '{self.cells[idx]}' tile")
        if self.agent == self.goal:
            raise LevelValidationError("agent start coincides with goal")
        if self.facing not in (0, 1, 2, 3):
            raise LevelValidationError(f"facing {self.facing} not in 0..3")

    @property
    def obstacle_count(self) -> int:
        return sum(1 for c in self.cells if c != EMPTY)


@dataclass(frozen=True)
class TerrainPayload:
    """Walker terrain genotype.  In 5D mode the range lows are pinned to 0."""

    stump_low: float = 0.0
    stump_high: float = 0.0
    stair_low: float = 0.0
    stair_high: float = 0.0
    stair_steps: int = 0
    roughness: float = 0.0
    pit_low: float = 0.0
    pit_high: float = 0.0
    mode: int = 5
    seed: Optional[int] = None

    @property
    def fields(self) -> tuple[str, ...]:
        return TERRAIN_FIELDS_5D if self.mode == 5 else TERRAIN_FIELDS_8D

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in self.fields)

    def validate(self) -> None:
        if self.mode not in (5, 8):
            raise LevelValidationError(f"terrain mode must be 5 or 8, got {self.mode}")
        for name in TERRAIN_FIELDS_8D:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise LevelValidationError(f"{name} is not finite")
            if not 0 <= v <= TERRAIN_MAX[name]:
                raise LevelValidationError(f"{name}={v} outside [0, {TERRAIN_MAX[name]}]")
        if int(self.stair_steps) != self.stair_steps:
            raise LevelValidationError("stair_steps must be an integer")
        for lo, hi in TERRAIN_RANGES:
            if getattr(self, lo) > getattr(self, hi):
                raise LevelValidationError(f"{lo} > {hi}")
        if self.mode == 5 and any(getattr(self, lo) != 0 for lo, _ in TERRAIN_RANGES):
            raise LevelValidationError("5D terrain has non-zero range lows")


Payload = Union[GridPayload, TerrainPayload]


@dataclass(frozen=True)
class Level:
    kind: str
    payload: Payload
    id: int = 0
    parent_id: Optional[int] = None
    generation: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LevelValidationError(f"unknown level kind {self.kind!r}")
        if self.generation < 0:
            raise LevelValidationError("generation must be non-negative")
        if (self.generation == 0) != (self.parent_id is None):
            raise LevelValidationError("generation == 0 iff parent_id is absent")
        if self.kind == TERRAIN:
            if not isinstance(self.payload, TerrainPayload):
                raise LevelValidationError("terrain level needs a TerrainPayload")
            self.payload.validate()
        else:
            if not isinstance(self.payload, GridPayload):
                raise LevelValidationError("grid level needs a GridPayload")
            self.payload.validate(self.kind)

    def child(self, payload: Payload, child_id: int) -> "Level":
        return Level(self.kind, payload, child_id, self.id, self.generation + 1)


@dataclass(frozen=True)
class RegretScore:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"regret score must be >= 0, got {self.value}")

    def __float__(self) -> float:
        return float(self.value)


@dataclass
class Trajectory:
    """One rollout segment on a single level.

    ``dones[t]`` is True when step ``t`` ended an episode; ``bootstrap_value`` is
    V of the state after the last step (0 when that step was terminal).  ``source``
    tags where the data came from so the trainer can audit what it learns on.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_value: float = 0.0
    log_probs: Optional[np.ndarray] = None
    level_id: Optional[int] = None
    source: str = "unknown"
    successes: Sequence[bool] = field(default_factory=list)

    def __post_init__(self):
        T = len(self.rewards)
        if T < 1:
            raise ValueError("trajectory must have at least one step")
        for name in ("observations", "actions", "values", "dones"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {T}")
        if self.log_probs is not None and len(self.log_probs) != T:
            raise ValueError("log_probs length mismatch")
        if self.dones[-1] and self.bootstrap_value != 0:
            raise ValueError("bootstrap_value must be 0 after a terminal step")

    def __len__(self) -> int:
        return len(self.rewards)

    def episode_slices(self) -> list[slice]:
        """Index ranges of the episodes in this segment (last may be unfinished)."""
        out, start = [], 0
        for t, d in enumerate(self.dones):
            if d:
                out.append(slice(start, t + 1))
                start = t + 1
        if start < len(self):
            out.append(slice(start, len(self)))
        return out

    def episode_returns(self, completed_only: bool = False) -> list[float]:
        slices = self.episode_slices()
        if completed_only and slices and not self.dones[slices[-1].stop - 1]:
            slices = slices[:-1]
        return [float(np.sum(self.rewards[s])) for s in slices]


@dataclass(frozen=True)
class RngState:
    """Seed plus stream id; each pair names an independent counter-based stream."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def split(self, stream: int) -> "RngState":
        return RngState(self.seed, stream)


# -- codec -------------------------------------------------------------------


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def encode_level(level: Level) -> str:
    head = [
        level.kind,
        str(level.id),
        "-" if level.parent_id is None else str(level.parent_id),
        str(level.generation),
    ]
    p = level.payload
    if isinstance(p, GridPayload):
        body = "".join(p.rows())
        if p.facing != 0:
            body += ":" + FACINGS[p.facing]
        if p.width != p.height:
            body += f":{p.width}x{p.height}"
    else:
        body = ",".join(_fmt(v) for v in p.values())
        if p.seed is not None:
            body += f":{p.seed}"
    return ";".join(head + [body])


def _parse_int(text: str, name: str) -> int:
    t = text.strip()
    if not t or not (t.isdigit() or (t[0] == "-" and t[1:].isdigit())):
        raise LevelParseError(name, f"expected an integer, got {text!r}")
    return int(t)


def _decode_grid(kind: str, body: str) -> GridPayload:
    parts = body.split(":")
    chars = parts[0]
    facing = 0
    dims = None
    for extra in parts[1:]:
        if len(extra) == 1 and extra in FACINGS:
            facing = FACINGS.index(extra)
        elif "x" in extra:
            w, _, h = extra.partition("x")
            dims = (_parse_int(w, "payload.width"), _parse_int(h, "payload.height"))
        else:
            raise LevelParseError("payload", f"unknown grid suffix {extra!r}")
    n = len(chars)
    if dims is None:
        side = math.isqrt(n)
        if side * side != n:
            raise LevelParseError("payload", f"{n} cells is not square; add :WxH")
        dims = (side, side)
    if dims[0] * dims[1] != n:
        raise LevelParseError("payload", f"{n} cells does not match {dims[0]}x{dims[1]}")
    if chars.count(AGENT_CHAR) != 1 or chars.count(GOAL_CHAR) != 1:
        raise LevelParseError("payload", "grid needs exactly one 'A' and one 'G'")
    agent, goal = chars.index(AGENT_CHAR), chars.index(GOAL_CHAR)
    cells = chars.replace(AGENT_CHAR, EMPTY).replace(GOAL_CHAR, EMPTY)
    return GridPayload(dims[0], dims[1], cells, agent, goal, facing)


def _decode_terrain(body: str) -> TerrainPayload:
    values_text, sep, seed_text = body.partition(":")
    seed = _parse_int(seed_text, "payload.seed") if sep else None
    tokens = values_text.split(",")
    if len(tokens) == 5:
        mode, names = 5, TERRAIN_FIELDS_5D
    elif len(tokens) == 8:
        mode, names = 8, TERRAIN_FIELDS_8D
    else:
        raise LevelParseError("payload", f"terrain needs 5 or 8 values, got {len(tokens)}")
    kwargs = {}
    for name, tok in zip(names, tokens):
        try:
            v = float(tok)
        except ValueError:
            raise LevelParseError(f"payload.{name}", f"not a number: {tok!r}") from None
        if not math.isfinite(v):
            raise LevelParseError(f"payload.{name}", "value is not finite")
        if name == "stair_steps":
            if not v.is_integer():
                raise LevelParseError("payload.stair_steps", f"not an integer: {tok!r}")
            v = int(v)
        kwargs[name] = v
    return TerrainPayload(mode=mode, seed=seed, **kwargs)


def decode_level(text: Union[str, bytes]) -> Level:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise LevelParseError("text", f"not utf-8: {e}") from None
    fields = text.strip().split(";")
    if len(fields) != 5:
        raise LevelParseError("text", f"expected 5 ';'-separated fields, got {len(fields)}")
    kind, id_text, parent_text, gen_text, body = fields
    if kind not in KINDS:
        raise LevelParseError("kind", f"unknown kind {kind!r}")
    level_id = _parse_int(id_text, "id")
    parent = None if parent_text == "-" else _parse_int(parent_text, "parent_id")
    generation = _parse_int(gen_text, "generation")
    payload = _decode_terrain(body) if kind == TERRAIN else _decode_grid(kind, body)
    try:
        return Level(kind, payload, level_id, parent, generation)
    except LevelValidationError:
        raise
    except (TypeError, ValueError) as e:
        raise LevelValidationError(str(e)) from None
