from collections import deque

import numpy as np
import pytest

from accel import env_grid
from accel.core import LAVA, MAZE, encode_level
from accel.envs import make_env
from accel.evalkit import (
    FixtureError,
    TestSuite,
    evaluate,
    extreme_terrain_suite,
    fixture_path,
    iqm,
    load_fixtures,
    optimality_gap,
    perfect_maze_suite,
    shipped_suites,
    write_results_csv,
)
from accel.learner import PolicyParams
from accel.env_terrain import DifficultyCategory, categorize


def bfs_first_action(state):
    """First action on a shortest path through (position, facing) space."""
    n_actions = env_grid.N_ACTIONS[state.level.kind]
    start = (state.pos, state.facing)
    seen = {start: None}
    queue = deque([state])
    while queue:
        s = queue.popleft()
        for a in range(n_actions):
            nxt, _, _, _ = env_grid.grid_step(s.__class__(s.level, s.pos, s.facing, 0, False, False, 10**9), a)
            key = (nxt.pos, nxt.facing)
            if key in seen:
                continue
            seen[key] = (s.pos, s.facing), a
            if nxt.success:
                while seen[key][0] != start:
                    key = seen[key][0]
                return seen[key][1]
            queue.append(nxt)
    return 0


def oracle(states, feats):
    return np.array([bfs_first_action(s) for s in states])


def test_oracle_solves_tiny_suites():
    for name in ("maze_tiny", "lava_tiny"):
        res = evaluate(oracle, load_fixtures(fixture_path(name)), np.random.default_rng(0), episodes=3)
        assert res.solved_rate == 1.0


def test_unreachable_goal_never_solved():
    level = env_grid.parse_art(MAZE, ["A.#.", "..#G", "..#."])
    suite = TestSuite("walled", [("walled", level)], episodes=20)
    rng = np.random.default_rng(1)
    res = evaluate(lambda st, X: rng.integers(3, size=len(X)), suite, rng)
    assert res.solved_rate == 0.0
    assert len(res.episodes) == 20


def test_solved_rate_recount_from_log():
    suite = load_fixtures(fixture_path("maze9_test"), episodes=4)
    rng = np.random.default_rng(2)
    res = evaluate(lambda st, X: rng.integers(3, size=len(X)), suite, rng)
    assert res.solved_rate == pytest.approx(np.mean([e["solved"] for e in res.episodes]))
    for row in res.per_level:
        eps = [e for e in res.episodes if e["level"] == row["level"]]
        assert row["episodes"] == 4 and row["solved_rate"] == pytest.approx(np.mean([e["solved"] for e in eps]))


def test_uniform_policy_equals_action_zero():
    env = make_env("maze9")
    arch = env.architecture((8,))
    params = PolicyParams(arch, np.zeros(arch.n_params))
    suite = load_fixtures(fixture_path("maze9_test"), episodes=1)
    a = evaluate(params, suite, np.random.default_rng(0))
    b = evaluate(lambda st, X: np.zeros(len(X), dtype=int), suite, np.random.default_rng(0))
    assert a.episodes == b.episodes


def test_obs_dim_mismatch():
    arch = make_env("lava").architecture((4,))
    params = PolicyParams(arch, np.zeros(arch.n_params))
    with pytest.raises(ValueError):
        evaluate(params, load_fixtures(fixture_path("maze_tiny")), np.random.default_rng(0))


def test_reproducible_and_csv(tmp_path):
    suite = load_fixtures(fixture_path("lava_test"), episodes=2)
    env = make_env("lava")
    params = PolicyParams(env.architecture((8,)), np.random.default_rng(3).normal(size=env.architecture((8,)).n_params))
    r1 = evaluate(params, suite, np.random.default_rng(5))
    r2 = evaluate(params, suite, np.random.default_rng(5))
    write_results_csv(r1, tmp_path / "a.csv")
    write_results_csv(r2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 1 + len(suite.levels) + 1
    assert lines[-1].split(",")[1] == "__aggregate__"


# -- fixtures ------------------------------------------------------------------------


def test_shipped_suites_load_and_are_solvable():
    names = shipped_suites()
    assert {"maze_test", "lava_test", "lava_empty", "terrain_test", "maze_smallcorridor"} <= set(names)
    for name in names:
        suite = load_fixtures(fixture_path(name))
        ids = [lvl.id for _, lvl in suite.levels]
        assert len(set(ids)) == len(ids)
        for _, lvl in suite.levels:
            if lvl.kind in (MAZE, LAVA):
                assert env_grid.shortest_path_length(lvl) is not None, (name, lvl.id)


def test_lava_empty_rooms_have_no_lava():
    suite = load_fixtures(fixture_path("lava_empty"))
    assert len(suite.levels) == 100
    assert all(lvl.payload.obstacle_count == 0 for _, lvl in suite.levels)


def _simple_paths(level, limit=5):
    p = level.payload
    nbrs = env_grid._neighbours(p, level.kind)
    count = 0
    stack = [(p.agent, frozenset([p.agent]))]
    while stack and count < limit:
        i, seen = stack.pop()
        if i == p.goal:
            count += 1
            continue
        stack.extend((j, seen | {j}) for j in nbrs(i) if j not in seen)
    return count


def test_corridors_have_one_path_per_arm():
    for name in ("maze_smallcorridor", "maze_largecorridor"):
        suite = load_fixtures(fixture_path(name))
        assert len(suite.levels) > 1
        for _, lvl in suite.levels:
            assert _simple_paths(lvl) == 1


def test_bad_fixture_file(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("# A\nmaze-grid;0;-;0;A.......G\n# B\nmaze-grid;1;-;0;A..\n")
    with pytest.raises(FixtureError) as err:
        load_fixtures(f)
    assert err.value.problems[0][0] == 4
    with pytest.raises(FileNotFoundError):
        load_fixtures(tmp_path / "none.txt")


def test_procedural_suites():
    rng = np.random.default_rng(6)
    pm = perfect_maze_suite(11)
    level = pm.generator(rng)
    assert level.payload.width == 11 and env_grid.shortest_path_length(level) is not None
    ext = extreme_terrain_suite()
    for _ in range(5):
        assert categorize(ext.generator(rng)) == DifficultyCategory.EXTREMELY_CHALLENGING


# -- aggregates --------------------------------------------------------------------


def test_iqm_examples():
    assert iqm([1, 2, 3, 4]) == pytest.approx(2.5)
    assert iqm(range(1, 9)) == pytest.approx(np.mean([3, 4, 5, 6]))
    assert iqm([5.0]) == 5.0
    # n=5: overlaps 0.15, 0.2, 0.15 on the middle three samples
    assert iqm([1, 2, 3, 4, 100]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        iqm([])


def test_iqm_properties():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(1, 50)))
        v = iqm(x)
        assert x.min() <= v <= x.max()
        assert iqm(2 * x + 1) == pytest.approx(2 * v + 1)
        assert iqm(rng.permutation(x)) == pytest.approx(v)


def test_optimality_gap():
    assert optimality_gap([1.0, 0.5, 0.0], 1.0) == pytest.approx(0.5)
    assert optimality_gap([2.0, 3.0], 1.0) == 0.0
    assert optimality_gap([150.0], 300.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        optimality_gap([1.0], 0.0)
