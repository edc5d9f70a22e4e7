"""Environment families behind one interface, plus batched rollout collection.

A "worker" here is one environment slot in a lockstep batch: W levels are
stepped together and share a single batched forward pass per step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from accel import env_grid, env_terrain
from accel.core import LAVA, MAZE, TERRAIN, Level, Trajectory
from accel.learner import CATEGORICAL, GAUSSIAN, Architecture, PolicyParams, distribution, forward


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    width: int = 7
    height: int = 7
    min_obstacles: int = 0
    max_obstacles: int = 0
    terrain_mode: int = 5
    max_steps: int = 250

    @property
    def is_grid(self) -> bool:
        return self.kind in (LAVA, MAZE)

    @property
    def obs_dim(self) -> int:
        if self.is_grid:
            return env_grid.feature_dim(self.kind, self.width, self.height)
        return env_terrain.OBS_DIM

    def architecture(self, hidden=(64, 64)) -> Architecture:
        if self.is_grid:
            return Architecture(self.obs_dim, env_grid.N_ACTIONS[self.kind], tuple(hidden), CATEGORICAL)
        return Architecture(self.obs_dim, env_terrain.ACTION_DIM, tuple(hidden), GAUSSIAN)

    # -- dynamics
    def reset(self, level: Level, max_steps: Optional[int] = None):
        steps = max_steps or self.max_steps
        if self.is_grid:
            return env_grid.grid_reset(level, None, steps)
        return env_terrain.terrain_reset(level, None, steps)

    def step(self, state, action):
        if self.is_grid:
            return env_grid.grid_step(state, int(action))
        return env_terrain.terrain_step(state, action)

    def features(self, obs: np.ndarray) -> np.ndarray:
        if self.is_grid:
            return env_grid.features(obs, self.kind, self.width, self.height)
        return obs

    # -- generators
    def sample_dr(self, rng: np.random.Generator, level_id: int = 0) -> Level:
        if self.is_grid:
            cfg = env_grid.GridDRConfig(self.width, self.height, self.min_obstacles, self.max_obstacles,
                                        randomize_facing=(self.kind == MAZE))
            return env_grid.grid_sample_dr(rng, self.kind, cfg, level_id)
        return env_terrain.terrain_sample_dr(rng, self.terrain_mode, level_id)

    def sample_simple(self, rng: np.random.Generator, level_id: int = 0) -> Level:
        """Empty room (grids) or easy-init terrain."""
        if self.is_grid:
            return env_grid.empty_room(rng, self.kind, self.width, self.height, level_id)
        return env_terrain.terrain_easy_init(rng, self.terrain_mode, level_id)

    def edit(self, level: Level, rng: np.random.Generator, n_edits: int, child_id: int) -> Level:
        if self.is_grid:
            return env_grid.grid_edit(level, rng, n_edits, child_id)
        edited = level
        for _ in range(n_edits):
            edited = env_terrain.terrain_edit(edited, rng, child_id)
        return level.child(edited.payload, child_id)

    def metrics(self, level: Level) -> dict:
        if self.is_grid:
            c = env_grid.grid_complexity(level)
            return {"obstacles": c.obstacle_count, "shortest_path": c.shortest_path, "solvable": c.solvable}
        p = level.payload
        return {
            "category": int(env_terrain.categorize(level)),
            "stump_high": p.stump_high,
            "pit_high": p.pit_high,
            "roughness": p.roughness,
            "stair_high": p.stair_high,
            "stair_steps": p.stair_steps,
        }


ENV_PRESETS = {
    "lava": EnvSpec(LAVA, 7, 7, 0, 20, max_steps=250),
    "maze": EnvSpec(MAZE, 15, 15, 0, 60, max_steps=250),
    "maze9": EnvSpec(MAZE, 9, 9, 0, 20, max_steps=250),
    "terrain": EnvSpec(TERRAIN, terrain_mode=5, max_steps=env_terrain.MAX_STEPS),
    "terrain8": EnvSpec(TERRAIN, terrain_mode=8, max_steps=env_terrain.MAX_STEPS),
}


def make_env(name: str, **overrides) -> EnvSpec:
    try:
        base = ENV_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENV_PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


# -- rollouts ----------------------------------------------------------------

Policy = Callable[[list, np.ndarray], np.ndarray]


class _Slot:
    __slots__ = ("level", "state", "obs", "feats", "actions", "logps", "values", "rewards", "dones",
                 "successes", "active")

    def __init__(self, env: EnvSpec, level: Level, max_steps: Optional[int]):
        self.level = level
        self.state, obs = env.reset(level, max_steps)
        self.obs = env.features(obs)
        self.feats, self.actions, self.logps, self.values, self.rewards, self.dones = [], [], [], [], [], []
        self.successes: list[bool] = []
        self.active = True


def _act(params, env: EnvSpec, X: np.ndarray, rng, greedy: bool, states):
    if callable(params):
        actions = np.asarray(params(states, X))
        n = len(X)
        return actions, np.zeros(n), np.zeros(n)
    head, values, log_std, _ = forward(params, X)
    dist = distribution(params, head, log_std)
    actions = dist.mode() if greedy else dist.sample(rng)
    return actions, dist.log_prob(actions), values


def _values(params, X: np.ndarray) -> np.ndarray:
    if callable(params):
        return np.zeros(len(X))
    return forward(params, X)[1]


def _to_traj(env: EnvSpec, slot: _Slot, bootstrap: float, source: str) -> Trajectory:
    return Trajectory(
        observations=np.asarray(slot.feats),
        actions=np.asarray(slot.actions),
        rewards=np.asarray(slot.rewards, dtype=np.float64),
        values=np.asarray(slot.values, dtype=np.float64),
        dones=np.asarray(slot.dones, dtype=bool),
        bootstrap_value=bootstrap,
        log_probs=np.asarray(slot.logps, dtype=np.float64),
        level_id=slot.level.id,
        source=source,
        successes=list(slot.successes),
    )


def collect_segments(params, env: EnvSpec, levels: Sequence[Level], rng: np.random.Generator,
                     n_steps: int, source: str, greedy: bool = False,
                     max_steps: Optional[int] = None) -> list[Trajectory]:
    """Fixed-length rollout per level, resetting onto the same level after each episode."""
    slots = [_Slot(env, lvl, max_steps) for lvl in levels]
    for _ in range(n_steps):
        X = np.stack([s.obs for s in slots])
        actions, logps, values = _act(params, env, X, rng, greedy, [s.state for s in slots])
        for k, s in enumerate(slots):
            s.feats.append(s.obs)
            s.actions.append(actions[k])
            s.logps.append(logps[k])
            s.values.append(values[k])
            s.state, obs, r, done = env.step(s.state, actions[k])
            s.rewards.append(r)
            s.dones.append(done)
            if done:
                s.successes.append(bool(s.state.success))
                s.state, obs = env.reset(s.level, max_steps)
            s.obs = env.features(obs)
    boot = _values(params, np.stack([s.obs for s in slots]))
    return [_to_traj(env, s, 0.0 if s.dones[-1] else float(boot[k]), source) for k, s in enumerate(slots)]


def collect_episodes(params, env: EnvSpec, levels: Sequence[Level], rng: np.random.Generator,
                     source: str, greedy: bool = False,
                     max_steps: Optional[int] = None) -> list[Trajectory]:
    """One complete episode per level, stepped in lockstep."""
    slots = [_Slot(env, lvl, max_steps) for lvl in levels]
    live = list(slots)
    while live:
        X = np.stack([s.obs for s in live])
        actions, logps, values = _act(params, env, X, rng, greedy, [s.state for s in live])
        for k, s in enumerate(live):
            s.feats.append(s.obs)
            s.actions.append(actions[k])
            s.logps.append(logps[k])
            s.values.append(values[k])
            s.state, obs, r, done = env.step(s.state, actions[k])
            s.rewards.append(r)
            s.dones.append(done)
            s.obs = env.features(obs)
            if done:
                s.successes.append(bool(s.state.success))
                s.active = False
        live = [s for s in live if s.active]
    return [_to_traj(env, s, 0.0, source) for s in slots]
