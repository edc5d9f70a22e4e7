"""Command line entry point: ``accel train | eval | inspect``.

Exit codes: 0 ok, 1 configuration or usage error, 2 runtime error.  Every
error is reported as one line, ``error: CODE: message``.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional


from accel import config as cfgmod
from accel import env_grid, env_terrain
from accel.core import TERRAIN, Level, LevelError, RngState, decode_level, encode_level
from accel.evalkit import (
    FixtureError,
    TestSuite,
    evaluate,
    extreme_terrain_suite,
    fixture_path,
    load_fixtures,
    perfect_maze_suite,
    write_results_csv,
)
from accel.learner import NonFiniteLossError, load_checkpoint
from accel.ued import lineage, run_training

OUTPUT_ROOT_ENV = "ACCEL_OUTPUT_ROOT"
EVAL_STREAM = 6

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("USAGE", message, EXIT_CONFIG)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# -- suites ------------------------------------------------------------------


def resolve_suite(spec: str, episodes: Optional[int] = None) -> TestSuite:
    """A shipped suite name, a fixture file path, ``perfect-maze[-N]`` or ``extreme-terrain``."""
    if spec.startswith("perfect-maze"):
        size = int(spec.rsplit("-", 1)[1]) if spec.count("-") == 2 else 51
        suite = perfect_maze_suite(size)
    elif spec == "extreme-terrain":
        suite = extreme_terrain_suite()
    else:
        path = Path(spec)
        if not path.exists():
            path = fixture_path(spec)
        if not path.exists():
            raise CliError("MISSING_SUITE", f"no suite file or shipped suite named {spec!r}")
        try:
            suite = load_fixtures(path)
        except FixtureError as e:
            raise CliError("BAD_SUITE", str(e)) from None
    if episodes is not None:
        suite = replace(suite, episodes=episodes)
    return suite


def _print_result(result, out) -> None:
    for row in result.per_level:
        print(f"{row['level']:<24} solved {row['solved_rate']:.3f} +- {row['solved_sem']:.3f}  "
              f"return {row['mean_return']:.3f} +- {row['return_sem']:.3f}", file=out)
    print(f"{'[' + result.suite + ']':<24} solved {result.solved_rate:.3f} +- {result.solved_sem:.3f}  "
          f"return {result.mean_return:.3f} +- {result.return_sem:.3f}", file=out)


# -- commands ----------------------------------------------------------------


def cmd_train(args, out=sys.stdout) -> int:
    try:
        overrides = cfgmod.parse_overrides(args.override or [])
        if args.seed is not None:
            overrides.setdefault("ued", {})["seed"] = str(args.seed)
        if args.config:
            if not Path(args.config).exists():
                raise CliError("MISSING_CONFIG", f"config file not found: {args.config}", EXIT_CONFIG)
            cfg = cfgmod.load(args.config, overrides)
        else:
            cfg = cfgmod.resolve("", overrides)
    except cfgmod.ConfigError as e:
        raise CliError("CONFIG", str(e), EXIT_CONFIG) from None

    if args.out:
        out_dir = Path(args.out)
    elif cfg.out_dir:
        out_dir = Path(cfg.out_dir)
    else:
        out_dir = output_root() / f"{cfg.env_name}-{cfg.ued.mode}-s{cfg.ued.seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.dumps())
    print(f"training {cfg.env_name} {cfg.ued.mode} seed {cfg.ued.seed} -> {out_dir}", file=out)
    try:
        art = run_training(cfg.env, cfg.ppo, cfg.buffer, cfg.ued, out_dir)
    except NonFiniteLossError as e:
        raise CliError("NONFINITE", f"{e}; diagnostic checkpoint in {out_dir / 'checkpoints'}") from None
    print(f"done: {art.final_metrics['updates']} updates, {art.final_metrics['env_steps']} env steps", file=out)

    rng = RngState(cfg.ued.seed, EVAL_STREAM).generator()
    for spec in cfg.suites:
        suite = resolve_suite(spec)
        result = evaluate(art.state.params, suite, rng)
        write_results_csv(result, out_dir / f"eval_{suite.name}.csv")
        _print_result(result, out)
    return EXIT_OK


def cmd_eval(args, out=sys.stdout) -> int:
    try:
        params, header = load_checkpoint(args.checkpoint)
    except FileNotFoundError as e:
        raise CliError("MISSING_CHECKPOINT", str(e)) from None
    except (ValueError, KeyError, OSError) as e:
        raise CliError("BAD_CHECKPOINT", str(e)) from None
    suite = resolve_suite(args.suite, args.episodes)
    rng = RngState(args.seed, EVAL_STREAM).generator()
    try:
        result = evaluate(params, suite, rng)
    except ValueError as e:
        raise CliError("MISMATCH", str(e)) from None
    _print_result(result, out)
    if args.csv:
        write_results_csv(result, args.csv)
    return EXIT_OK


def _read_levels(path: Path) -> dict[int, Level]:
    """Levels from a run directory (``levels.txt``) or any level/fixture file, keyed by id."""
    src = path / "levels.txt" if path.is_dir() else path
    if not src.exists():
        raise CliError("MISSING_RUN", f"no level file at {src}")
    levels: dict[int, Level] = {}
    for n, line in enumerate(src.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            level = decode_level(line.split("\t")[0])
        except LevelError as e:
            raise CliError("BAD_LEVEL", f"{src}:{n}: {e}") from None
        levels[level.id] = level
    return levels


def cmd_inspect(args, out=sys.stdout) -> int:
    path = Path(args.run)
    if args.what == "buffer":
        snap = path / "buffer.txt" if path.is_dir() else path
        if not snap.exists():
            raise CliError("MISSING_RUN", f"no buffer snapshot at {snap}")
        print("level_id\tgeneration\tscore\tstaleness\tlevel", file=out)
        for line in snap.read_text().splitlines():
            enc, score, stale = line.split("\t")
            level = decode_level(enc)
            print(f"{level.id}\t{level.generation}\t{score}\t{stale}\t{enc}", file=out)
        return EXIT_OK

    if args.id is None:
        raise CliError("USAGE", f"inspect {args.what} needs a level id", EXIT_CONFIG)
    levels = _read_levels(path)
    if args.id not in levels:
        raise CliError("UNKNOWN_ID", f"level {args.id} not found under {path}")
    if args.what == "lineage":
        try:
            chain = lineage(args.id, levels)
        except KeyError as e:
            raise CliError("UNKNOWN_ID", str(e).strip("'\"")) from None
        for level in chain:
            print(encode_level(level), file=out)
        return EXIT_OK

    level = levels[args.id]
    if level.kind == TERRAIN:
        out.write(env_terrain.heightfield_csv(level))
    else:
        print(env_grid.render(level), file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="accel", description="Regret-based curriculum training, evaluation and inspection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a curriculum training job")
    t.add_argument("--config", help="INI config file (defaults apply when omitted)")
    t.add_argument("--seed", type=int)
    t.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config field; repeatable")
    t.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV} or ./runs, per env/mode/seed)")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test suite")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--suite", required=True,
                   help="shipped suite name, fixture file, perfect-maze[-N] or extreme-terrain")
    e.add_argument("--episodes", type=int, default=100, help="episodes per level (default 100)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", help="write per-level results here")

    i = sub.add_parser("inspect", help="buffer snapshot, lineage walk or level rendering")
    i.add_argument("run", help="run directory, or a level/fixture file for lineage and render")
    i.add_argument("what", choices=["buffer", "lineage", "render"])
    i.add_argument("id", type=int, nargs="?")
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: Optional[list[str]] = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except CliError as e:
        print(f"error: {e.code}: {' '.join(str(e).split())}", file=sys.stderr)
        return e.status
    except (OSError, ValueError) as e:
        print(f"error: RUNTIME: {' '.join(str(e).split())}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
