"""Run configuration: flat INI sections merged over per-environment defaults.

A config file names an environment and overrides any field of the ``env``,
``ppo``, ``buffer`` and ``ued`` sections::

    [run]
    env = lava
    suites = lava_test

    [ued]
    mode = accel
    total_updates = 300

Unset fields take the per-environment defaults below.  ``RunConfig.dumps``
writes every resolved field, and parsing that text gives back an equal config.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional

from accel.buffer import BufferConfig
from accel.envs import ENV_PRESETS, EnvSpec
from accel.learner import GRID_PPO, TERRAIN_PPO, PPOConfig
from accel.ued import ACCEL, BATCH, DR, EASY, PLR, UEDConfig

SECTIONS = ("env", "ppo", "buffer", "ued")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` holds one ``section.field: message`` per fault."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# per-environment defaults: (ppo, buffer, ued-by-mode)
_GRID_BUFFER = BufferConfig(capacity=4000, temperature=0.3, staleness_coef=0.5)


def _defaults(env_name: str, mode: str) -> tuple[PPOConfig, BufferConfig, UEDConfig]:
    kind = ENV_PRESETS[env_name].kind
    if kind == "terrain":
        ppo = TERRAIN_PPO
        buf = BufferConfig(capacity=1000, temperature=0.1, staleness_coef=0.5)
        ued = UEDConfig(mode=mode, replay_rate=0.9, edit_criterion=EASY)
    elif kind == "lava-grid":
        ppo = GRID_PPO
        buf = replace(_GRID_BUFFER, capacity=10000)
        ued = UEDConfig(mode=mode, replay_rate=0.9, edit_criterion=BATCH)
    else:
        ppo = GRID_PPO
        buf = _GRID_BUFFER
        ued = UEDConfig(mode=mode, replay_rate=0.8, edit_criterion=EASY)
    if mode == PLR:
        ued = replace(ued, replay_rate=0.5)
    return ppo, buf, ued


@dataclass(frozen=True)
class RunConfig:
    env_name: str
    env: EnvSpec
    ppo: PPOConfig
    buffer: BufferConfig
    ued: UEDConfig
    suites: tuple[str, ...] = field(default_factory=tuple)
    out_dir: str = ""

    def section(self, name: str):
        return getattr(self, name)

    def dumps(self) -> str:
        lines = ["[run]", f"env = {self.env_name}", f"suites = {','.join(self.suites)}",
                 f"out_dir = {self.out_dir}", ""]
        for name in SECTIONS:
            lines.append(f"[{name}]")
            obj = self.section(name)
            for f in fields(obj):
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def _build(section: str, base, values: dict, problems: list[str]):
    known = {f.name for f in fields(base)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            problems.append(f"{section}.{key}: unknown field")
            continue
        try:
            kwargs[key] = _coerce(raw, getattr(base, key))
        except ValueError as e:
            problems.append(f"{section}.{key}: {e}")
    try:
        return replace(base, **kwargs)
    except (ValueError, TypeError) as e:
        problems.append(f"{section}: {e}")
        return base


def parse_overrides(items: Iterable[str]) -> dict[str, dict[str, str]]:
    """``section.key=value`` strings to nested dict."""
    out: dict[str, dict[str, str]] = {}
    problems = []
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            problems.append(f"override {item!r}: expected section.key=value")
            continue
        out.setdefault(section, {})[name] = value.strip()
    if problems:
        raise ConfigError(problems)
    return out


def resolve(text: str = "", overrides: Optional[dict[str, dict[str, str]]] = None) -> RunConfig:
    """Parse INI ``text``, apply ``overrides`` and validate the result."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError([f"syntax: {' '.join(str(e).split())}"]) from None
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for section, vals in (overrides or {}).items():
        raw.setdefault(section, {}).update(vals)

    problems = [f"{s}: unknown section" for s in raw if s not in SECTIONS + ("run",)]
    run = raw.get("run", {})
    for key in run:
        if key not in ("env", "suites", "out_dir"):
            problems.append(f"run.{key}: unknown field")
    env_name = run.get("env", "lava").strip()
    if env_name not in ENV_PRESETS:
        raise ConfigError(problems + [f"run.env: unknown environment {env_name!r}; choose from {sorted(ENV_PRESETS)}"])
    mode = raw.get("ued", {}).get("mode", ACCEL).strip()
    if mode not in (DR, PLR, ACCEL):
        raise ConfigError(problems + [f"ued.mode: must be one of dr, plr, accel, got {mode!r}"])

    ppo0, buf0, ued0 = _defaults(env_name, mode)
    env = _build("env", ENV_PRESETS[env_name], raw.get("env", {}), problems)
    ppo = _build("ppo", ppo0, raw.get("ppo", {}), problems)
    buf = _build("buffer", buf0, raw.get("buffer", {}), problems)
    ued = _build("ued", ued0, raw.get("ued", {}), problems)

    # cross-field checks
    if "kind" in raw.get("env", {}) and env.kind != ENV_PRESETS[env_name].kind:
        problems.append("env.kind: cannot change the kind of a named environment")
    if env.is_grid:
        if env.width < 3 or env.height < 3:
            problems.append("env.width/height: grids must be at least 3x3")
        elif env.max_obstacles > env.width * env.height - 2:
            problems.append("env.max_obstacles: exceeds free cells")
        if env.min_obstacles > env.max_obstacles:
            problems.append("env.min_obstacles: larger than max_obstacles")
    elif env.terrain_mode not in (5, 8):
        problems.append("env.terrain_mode: must be 5 or 8")
    if env.max_steps < 1:
        problems.append("env.max_steps: must be >= 1")

    suites = tuple(s.strip() for s in run.get("suites", "").split(",") if s.strip())
    if problems:
        raise ConfigError(problems)
    return RunConfig(env_name, env, ppo, buf, ued, suites, run.get("out_dir", "").strip())


def load(path, overrides: Optional[dict[str, dict[str, str]]] = None) -> RunConfig:
    with open(path) as fh:
        return resolve(fh.read(), overrides)
