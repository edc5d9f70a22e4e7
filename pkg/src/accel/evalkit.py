"""Held-out evaluation: fixture suites, solved rates and robust aggregates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from accel import env_grid, env_terrain
from accel.core import MAZE, TERRAIN, Level, LevelError, decode_level
from accel.envs import EnvSpec, collect_episodes

DEFAULT_EPISODES = 100


class FixtureError(ValueError):
    def __init__(self, path, problems: list[tuple[int, str]]):
        self.problems = problems
        lines = "; ".join(f"line {n}: {msg}" for n, msg in problems)
        super().__init__(f"{path}: {len(problems)} bad fixture line(s): {lines}")


@dataclass
class TestSuite:
    name: str
    levels: list[tuple[str, Level]] = field(default_factory=list)
    episodes: int = DEFAULT_EPISODES
    max_steps: Optional[int] = None
    generator: Optional[Callable[[np.random.Generator], Level]] = None
    generator_name: str = ""

    __test__ = False  # not a pytest class

    @property
    def kind(self) -> str:
        if self.levels:
            return self.levels[0][1].kind
        return TERRAIN if "terrain" in self.generator_name else MAZE


def load_fixtures(path, episodes: int = DEFAULT_EPISODES) -> TestSuite:
    """Read a suite file: encoded levels, each preceded by a ``# Name`` comment line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"fixture file not found: {path}")
    levels, problems = [], []
    name = None
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            name = line.lstrip("#").strip()
            continue
        try:
            level = decode_level(line)
        except LevelError as e:
            problems.append((n, str(e)))
            continue
        levels.append((name or f"level{len(levels)}", level))
    if problems:
        raise FixtureError(path, problems)
    if not levels:
        raise FixtureError(path, [(0, "no levels")])
    return TestSuite(path.stem, levels, episodes)


def fixture_path(name: str) -> Path:
    """Path of a suite shipped with the package (e.g. ``maze_test``)."""
    fname = name if name.endswith(".txt") else name + ".txt"
    return Path(str(resources.files("accel") / "fixtures" / fname))


def shipped_suites() -> list[str]:
    return sorted(p.stem for p in Path(str(resources.files("accel") / "fixtures")).glob("*.txt"))


def perfect_maze_suite(size: int = 51, episodes: int = DEFAULT_EPISODES) -> TestSuite:
    return TestSuite(
        f"PerfectMaze{size}", episodes=episodes, max_steps=4 * size * size,
        generator=lambda rng: env_grid.perfect_maze(rng, size, size),
        generator_name=f"perfect-maze-{size}",
    )


def extreme_terrain_suite(episodes: int = 1000, mode: int = 5) -> TestSuite:
    """Terrain resampled on every reset until it meets all three difficulty thresholds."""

    def draw(rng: np.random.Generator) -> Level:
        while True:
            level = env_terrain.terrain_sample_dr(rng, mode)
            if env_terrain.categorize(level) == env_terrain.DifficultyCategory.EXTREMELY_CHALLENGING:
                return level

    return TestSuite("ExtremelyChallenging", episodes=episodes, generator=draw, generator_name="terrain-extreme")


def suite_env(suite: TestSuite) -> EnvSpec:
    level = suite.levels[0][1] if suite.levels else suite.generator(np.random.default_rng(0))
    if level.kind == TERRAIN:
        return EnvSpec(TERRAIN, terrain_mode=level.payload.mode,
                       max_steps=suite.max_steps or env_terrain.MAX_STEPS)
    p = level.payload
    return EnvSpec(level.kind, p.width, p.height, max_steps=suite.max_steps or env_grid.DEFAULT_MAX_STEPS)


def _sem(xs: Sequence[float]) -> float:
    return float(np.std(xs, ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0


@dataclass
class EvalResult:
    suite: str
    solved_rate: float
    solved_sem: float
    mean_return: float
    return_sem: float
    per_level: list[dict]
    episodes: list[dict]


def evaluate(policy, suite: TestSuite, rng: np.random.Generator, episodes: Optional[int] = None,
             batch: int = 64) -> EvalResult:
    """Greedy rollouts over the suite.

    ``policy`` is a PolicyParams (argmax / distribution mean actions) or a callable
    ``policy(states, features) -> actions``.  Solved means the goal was reached
    (grids) or the course was completed (terrain).
    """
    n_eps = episodes or suite.episodes
    env = suite_env(suite)
    if not callable(policy) and policy.arch.obs_dim != env.obs_dim:
        raise ValueError(f"policy expects {policy.arch.obs_dim} inputs, suite {suite.name} gives {env.obs_dim}")
    jobs: list[tuple[str, Level]] = []
    if suite.generator is not None:
        jobs = [(suite.name, suite.generator(rng)) for _ in range(n_eps)]
    else:
        jobs = [(name, level) for name, level in suite.levels for _ in range(n_eps)]
    log = []
    for start in range(0, len(jobs), batch):
        chunk = jobs[start:start + batch]
        trajs = collect_episodes(policy, env, [lvl for _, lvl in chunk], rng, source="eval", greedy=True)
        for (name, lvl), t in zip(chunk, trajs):
            log.append({"level": name, "level_id": lvl.id, "return": float(np.sum(t.rewards)),
                        "solved": bool(t.successes and t.successes[-1]), "length": len(t)})
    per_level = []
    names = list(dict.fromkeys(e["level"] for e in log))
    for name in names:
        rows = [e for e in log if e["level"] == name]
        solved = [float(e["solved"]) for e in rows]
        rets = [e["return"] for e in rows]
        per_level.append({"level": name, "episodes": len(rows), "solved_rate": float(np.mean(solved)),
                          "solved_sem": _sem(solved), "mean_return": float(np.mean(rets)),
                          "return_sem": _sem(rets)})
    solved = [float(e["solved"]) for e in log]
    rets = [e["return"] for e in log]
    return EvalResult(suite.name, float(np.mean(solved)), _sem(solved), float(np.mean(rets)), _sem(rets),
                      per_level, log)


def write_results_csv(result: EvalResult, path) -> None:
    """One row per level plus a final aggregate row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "level", "episodes", "solved_rate", "solved_sem", "mean_return", "return_sem"])
        for row in result.per_level:
            w.writerow([result.suite, row["level"], row["episodes"], repr(row["solved_rate"]),
                        repr(row["solved_sem"]), repr(row["mean_return"]), repr(row["return_sem"])])
        w.writerow([result.suite, "__aggregate__", len(result.episodes), repr(result.solved_rate),
                    repr(result.solved_sem), repr(result.mean_return), repr(result.return_sem)])


# -- aggregates --------------------------------------------------------------


def iqm(samples: Sequence[float]) -> float:
    """Interquartile mean with fractional trimming.

    Sample i of n (sorted) covers the quantile interval [i/n, (i+1)/n]; it is
    weighted by its overlap with [0.25, 0.75].
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise ValueError("iqm of an empty sample")
    lo = np.arange(n) / n
    hi = np.arange(1, n + 1) / n
    w = np.clip(np.minimum(hi, 0.75) - np.maximum(lo, 0.25), 0.0, None)
    return float(np.dot(w, x) / w.sum())


def optimality_gap(samples: Sequence[float], optimum: float) -> float:
    """Mean shortfall below ``optimum``, normalized by it; overshoot counts as zero."""
    if not optimum > 0:
        raise ValueError("optimum must be > 0")
    x = np.asarray(samples, dtype=np.float64)
    return float(np.mean(np.maximum(0.0, 1.0 - x / optimum)))
