"""The curriculum loop: domain randomization, robust PLR and ACCEL.

Each iteration draws a replay decision.  Exploration levels from the generator
are only scored (no gradient step); replayed buffer levels are trained on and,
under ACCEL, edited afterwards, with the children scored and offered to the
buffer.  In PLR and ACCEL modes the student never trains on anything but
replayed levels; every update checks the source tag of its trajectories.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from accel.buffer import BufferConfig, BufferEntry, LevelBuffer
from accel.core import Level, RegretScore, RngState, Trajectory, encode_level
from accel.envs import EnvSpec, collect_episodes, collect_segments
from accel.learner import (
    Adam,
    NonFiniteLossError,
    PolicyParams,
    PPOConfig,
    RewardScaler,
    init_params,
    ppo_update,
    save_checkpoint,
)
from accel.regret import easy_score, trajectory_regret

log = logging.getLogger(__name__)

DR, PLR, ACCEL = "dr", "plr", "accel"
MODES = (DR, PLR, ACCEL)
EASY, BATCH = "easy", "batch"

REPLAY, EXPLORE, EDIT, DR_TRAIN = "replay", "generator", "edit", "dr-train"

LOG_COLUMNS = [
    "iteration",
    "update",
    "branch",
    "env_steps",
    "mean_train_return",
    "train_solved_rate",
    "buffer_size",
    "buffer_mean_score",
    "buffer_mean_generation",
    "buffer_mean_obstacles",
    "buffer_mean_shortest_path",
    "buffer_solvable_frac",
    "buffer_frac_easy",
    "buffer_frac_challenging",
    "buffer_frac_very_challenging",
    "buffer_frac_extremely_challenging",
]


@dataclass(frozen=True)
class UEDConfig:
    mode: str = ACCEL
    replay_rate: float = 0.8
    edit_rate: float = 1.0
    n_edits: int = 5
    edit_criterion: str = EASY
    edit_count: int = 4
    generator: str = "auto"  # simple | dr | auto (simple for accel, dr otherwise)
    total_updates: int = 1000
    eval_every: int = 0
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.replay_rate <= 1:
            raise ValueError("replay_rate must lie in [0, 1]")
        if not 0 <= self.edit_rate <= 1:
            raise ValueError("edit_rate must lie in [0, 1]")
        if self.n_edits < 1 or self.edit_count < 1:
            raise ValueError("n_edits and edit_count must be >= 1")
        if self.edit_criterion not in (EASY, BATCH):
            raise ValueError(f"edit_criterion must be 'easy' or 'batch', got {self.edit_criterion!r}")
        if self.generator not in ("auto", "simple", "dr"):
            raise ValueError(f"generator must be auto, simple or dr, got {self.generator!r}")
        if self.total_updates < 0 or self.eval_every < 0:
            raise ValueError("total_updates and eval_every must be >= 0")

    @property
    def resolved_generator(self) -> str:
        if self.generator != "auto":
            return self.generator
        return "simple" if self.mode == ACCEL else "dr"


@dataclass
class ReplayRecord:
    level: Level
    trajectory: Trajectory
    score: RegretScore


@dataclass
class UEDState:
    """Everything the orchestrator owns: policy, optimizer, buffer, streams and counters."""

    env: EnvSpec
    ppo: PPOConfig
    buffer_config: BufferConfig
    ued: UEDConfig
    params: PolicyParams
    optimizer: Adam
    buffer: LevelBuffer
    rng_replay: np.random.Generator
    rng_levels: np.random.Generator
    rng_edits: np.random.Generator
    rng_actions: np.random.Generator
    rng_ppo: np.random.Generator
    scaler: Optional[RewardScaler] = None
    next_id: int = 0
    iteration: int = 0
    updates: int = 0
    env_steps: int = 0
    pending_edits: list = field(default_factory=list)
    registry: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    last_row: dict = field(default_factory=dict)
    editor_hook: Optional[Callable] = None

    def new_id(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i


def init_state(env: EnvSpec, ppo: PPOConfig, buffer_config: BufferConfig, ued: UEDConfig) -> UEDState:
    root = RngState(ued.seed)
    params = init_params(env.architecture(ued.hidden), root.split(5).generator())
    return UEDState(
        env=env,
        ppo=ppo,
        buffer_config=buffer_config,
        ued=ued,
        params=params,
        optimizer=Adam(params.arch.n_params, ppo.learning_rate, ppo.adam_eps),
        buffer=LevelBuffer(buffer_config),
        rng_replay=root.split(0).generator(),
        rng_levels=root.split(1).generator(),
        rng_edits=root.split(2).generator(),
        rng_actions=root.split(3).generator(),
        rng_ppo=root.split(4).generator(),
        scaler=RewardScaler(ppo.gamma) if ppo.return_normalization else None,
    )


# -- helpers -----------------------------------------------------------------


def _generate(state: UEDState) -> Level:
    if state.ued.resolved_generator == "simple":
        return state.env.sample_simple(state.rng_levels, state.new_id())
    return state.env.sample_dr(state.rng_levels, state.new_id())


def _scaled(state: UEDState, traj: Trajectory) -> Trajectory:
    if state.scaler is None:
        return traj
    return replace(traj, rewards=state.scaler.scale(traj.rewards))


def _score(state: UEDState, traj: Trajectory) -> RegretScore:
    return trajectory_regret(_scaled(state, traj), state.ppo.gamma, state.ppo.gae_lambda)


def _count_steps(state: UEDState, trajs) -> None:
    state.env_steps += sum(len(t) for t in trajs)


def _offer(state: UEDState, level: Level, score: RegretScore, origin: str) -> bool:
    entry = BufferEntry(level, score, metrics=state.env.metrics(level))
    accepted = state.buffer.insert(entry)
    event = {
        "event": "insert",
        "iteration": state.iteration,
        "origin": origin,
        "level_id": level.id,
        "parent_id": level.parent_id,
        "generation": level.generation,
        "score": score.value,
        "accepted": accepted,
    }
    if accepted:
        state.registry[level.id] = level
        if state.buffer.last_evicted is not None:
            event["evicted"] = state.buffer.last_evicted.level.id
    state.events.append(event)
    return accepted


def _train(state: UEDState, trajs: list[Trajectory]) -> dict:
    if state.ued.mode in (PLR, ACCEL):
        bad = [t.source for t in trajs if t.source != REPLAY]
        if bad:
            raise AssertionError(f"training batch contains non-replay trajectories: {bad}")
    if state.scaler is not None:
        for t in trajs:
            state.scaler.observe(t.rewards, t.dones)
    batch = [_scaled(state, t) for t in trajs]
    try:
        state.params, stats = ppo_update(state.params, batch, state.ppo, state.rng_ppo, state.optimizer)
    except NonFiniteLossError:
        state.events.append({"event": "abort", "iteration": state.iteration, "reason": "non-finite loss"})
        raise
    state.updates += 1
    state.audit.append({"update": state.updates, "sources": sorted({t.source for t in trajs}),
                        "level_ids": [t.level_id for t in trajs]})
    return stats


def _explore(state: UEDState) -> list[Trajectory]:
    levels = [_generate(state) for _ in range(state.ppo.workers)]
    trajs = collect_segments(state.params, state.env, levels, state.rng_actions,
                             state.ppo.rollout_length, source=EXPLORE)
    _count_steps(state, trajs)
    for level, traj in zip(levels, trajs):
        _offer(state, level, _score(state, traj), EXPLORE)
    return trajs


def _edit_phase(state: UEDState) -> None:
    records = state.pending_edits
    state.pending_edits = []
    if state.ued.edit_criterion == EASY:
        ranked = sorted(records, key=lambda r: -easy_score(r.trajectory, r.score))
        parents = [r.level for r in ranked[: state.ued.edit_count]]
    else:
        parents = [r.level for r in records]
    children = [state.env.edit(p, state.rng_edits, state.ued.n_edits, state.new_id()) for p in parents]
    for parent, child in zip(parents, children):
        state.events.append({"event": "edit", "iteration": state.iteration,
                             "parent_id": parent.id, "child_id": child.id})
    trajs = collect_episodes(state.params, state.env, children, state.rng_actions, source=EDIT)
    _count_steps(state, trajs)
    for child, traj in zip(children, trajs):
        score = _score(state, traj)
        _offer(state, child, score, EDIT)
        if state.editor_hook is not None:
            state.editor_hook(child, score)


def ued_iteration(state: UEDState) -> UEDState:
    """One pass of the curriculum loop (mutates and returns ``state``)."""
    state.iteration += 1
    cfg = state.ued
    train_trajs: list[Trajectory] = []
    if cfg.mode == DR:
        branch = "dr"
        levels = [_generate(state) for _ in range(state.ppo.workers)]
        train_trajs = collect_segments(state.params, state.env, levels, state.rng_actions,
                                       state.ppo.rollout_length, source=DR_TRAIN)
        _count_steps(state, train_trajs)
        _train(state, train_trajs)
    else:
        replay = state.rng_replay.random() < cfg.replay_rate and len(state.buffer) > 0
        if not replay:
            branch = "explore"
            _explore(state)
        else:
            branch = "replay"
            levels = [state.buffer.sample(state.rng_levels) for _ in range(state.ppo.workers)]
            train_trajs = collect_segments(state.params, state.env, levels, state.rng_actions,
                                           state.ppo.rollout_length, source=REPLAY)
            _count_steps(state, train_trajs)
            scores = [_score(state, t) for t in train_trajs]
            _train(state, train_trajs)
            for level, traj, score in zip(levels, train_trajs, scores):
                if level.id in state.buffer:
                    state.buffer.update_score(level.id, score)
                state.pending_edits.append(ReplayRecord(level, traj, score))
            if cfg.mode == ACCEL and state.rng_edits.random() < cfg.edit_rate:
                _edit_phase(state)
            else:
                state.pending_edits = []
    state.last_row = _log_row(state, branch, train_trajs)
    return state


def initial_fill(state: UEDState) -> None:
    """Score and insert ``fill_ratio * capacity`` DR-sampled levels before training."""
    target = int(round(state.buffer_config.fill_ratio * state.buffer_config.capacity))
    if state.ued.mode == DR:
        return
    done = 0
    while done < target:
        n = min(state.ppo.workers, target - done)
        levels = [state.env.sample_dr(state.rng_levels, state.new_id()) for _ in range(n)]
        trajs = collect_segments(state.params, state.env, levels, state.rng_actions,
                                 state.ppo.rollout_length, source=EXPLORE)
        _count_steps(state, trajs)
        for level, traj in zip(levels, trajs):
            _offer(state, level, _score(state, traj), "fill")
        done += n


# -- logging -----------------------------------------------------------------


def _mean(xs) -> Optional[float]:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 10))
    return str(x)


def _log_row(state: UEDState, branch: str, train_trajs: list[Trajectory]) -> dict:
    returns = [r for t in train_trajs for r in t.episode_returns(completed_only=True)]
    successes = [s for t in train_trajs for s in t.successes]
    row = {c: None for c in LOG_COLUMNS}
    row.update(
        iteration=state.iteration,
        update=state.updates,
        branch=branch,
        env_steps=state.env_steps,
        mean_train_return=_mean(returns),
        train_solved_rate=_mean([float(s) for s in successes]),
    )
    if state.ued.mode != DR and len(state.buffer):
        entries = list(state.buffer)
        row.update(
            buffer_size=len(entries),
            buffer_mean_score=_mean([e.score.value for e in entries]),
            buffer_mean_generation=_mean([float(e.level.generation) for e in entries]),
        )
        if state.env.is_grid:
            row.update(
                buffer_mean_obstacles=_mean([float(e.metrics["obstacles"]) for e in entries]),
                buffer_mean_shortest_path=_mean([e.metrics["shortest_path"] for e in entries]),
                buffer_solvable_frac=_mean([float(e.metrics["solvable"]) for e in entries]),
            )
        else:
            cats = np.bincount([e.metrics["category"] for e in entries], minlength=4) / len(entries)
            row.update(
                buffer_frac_easy=float(cats[0]),
                buffer_frac_challenging=float(cats[1]),
                buffer_frac_very_challenging=float(cats[2]),
                buffer_frac_extremely_challenging=float(cats[3]),
            )
    return row


def lineage(level_id: int, registry: dict) -> list[Level]:
    """Ancestor chain ending at ``level_id``, root first."""
    chain = []
    current: Optional[int] = level_id
    while current is not None:
        if current not in registry:
            raise KeyError(f"level {current} is not in the lineage registry")
        level = registry[current]
        chain.append(level)
        current = level.parent_id
    return chain[::-1]


# -- full runs ---------------------------------------------------------------


@dataclass
class RunArtifacts:
    out_dir: Path
    log_path: Path
    events_path: Path
    levels_path: Path
    checkpoint: Path
    final_metrics: dict
    state: UEDState


def _write_checkpoint(state: UEDState, path: Path) -> None:
    save_checkpoint(path, state.params, {"update": state.updates, "env": state.env.kind,
                                         "seed": state.ued.seed})


def run_training(env: EnvSpec, ppo: PPOConfig, buffer_config: BufferConfig, ued: UEDConfig,
                 out_dir, on_checkpoint: Optional[Callable[[UEDState, Path], None]] = None) -> RunArtifacts:
    """Iterate until ``total_updates`` student updates; write logs and checkpoints to ``out_dir``.

    Outputs: ``train_log.csv`` (one row per iteration), ``events.jsonl``,
    ``levels.txt`` (every level ever accepted into the buffer, for lineage walks),
    ``buffer.txt`` snapshots, ``checkpoints/`` and ``final_metrics.json``.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    state = init_state(env, ppo, buffer_config, ued)
    log_path, events_path, levels_path = out / "train_log.csv", out / "events.jsonl", out / "levels.txt"
    written_events = 0
    written_levels: set = set()

    with open(log_path, "w", newline="") as log_fh, open(events_path, "w") as ev_fh, \
            open(levels_path, "w") as lv_fh:
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)

        def flush():
            nonlocal written_events
            for ev in state.events[written_events:]:
                ev_fh.write(json.dumps(ev, sort_keys=True) + "\n")
                if ev.get("event") == "insert" and ev["accepted"] and ev["level_id"] not in written_levels:
                    written_levels.add(ev["level_id"])
                    lv_fh.write(encode_level(state.registry[ev["level_id"]]) + "\n")
            written_events = len(state.events)

        initial_fill(state)
        flush()
        while state.updates < ued.total_updates:
            before = state.updates
            try:
                ued_iteration(state)
            except NonFiniteLossError:
                flush()
                _write_checkpoint(state, out / "checkpoints" / "diagnostic.npz")
                raise
            writer.writerow([_fmt(state.last_row[c]) for c in LOG_COLUMNS])
            flush()
            if ued.eval_every and state.updates != before and state.updates % ued.eval_every == 0:
                ckpt = out / "checkpoints" / f"update_{state.updates:06d}.npz"
                _write_checkpoint(state, ckpt)
                (out / "checkpoints" / f"buffer_{state.updates:06d}.txt").write_text(
                    "".join(line + "\n" for line in state.buffer.snapshot_lines()))
                if on_checkpoint is not None:
                    on_checkpoint(state, ckpt)

    final = out / "final.npz"
    _write_checkpoint(state, final)
    (out / "buffer.txt").write_text("".join(line + "\n" for line in state.buffer.snapshot_lines()))
    metrics = {k: state.last_row.get(k) for k in LOG_COLUMNS}
    metrics.update(iterations=state.iteration, updates=state.updates, env_steps=state.env_steps)
    (out / "final_metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(out, log_path, events_path, levels_path, final, metrics, state)
