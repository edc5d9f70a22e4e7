import itertools

import numpy as np
import pytest
from scipy import stats

from accel.core import TERRAIN, TERRAIN_FIELDS_8D, TERRAIN_MAX, TERRAIN_RANGES, Level, TerrainPayload
from accel import env_terrain as et
from accel.env_terrain import (
    DifficultyCategory as DC,
    apply_terrain_edit,
    categorize,
    heightfield,
    terrain_easy_init,
    terrain_edit,
    terrain_reset,
    terrain_sample_dr,
    terrain_step,
)


def T(mode=5, seed=1, **kw):
    return Level(TERRAIN, TerrainPayload(mode=mode, seed=seed, **kw))


# -- generators ------------------------------------------------------------------


@pytest.mark.parametrize("mode", [5, 8])
def test_easy_init_values(mode):
    rng = np.random.default_rng(0)
    rough = []
    for _ in range(10_000):
        level = terrain_easy_init(rng, mode)
        p = level.payload
        assert (p.stump_low, p.stump_high) == (0.0, 0.4)
        assert (p.stair_low, p.stair_high, p.stair_steps) == (0.0, 0.4, 1)
        assert (p.pit_low, p.pit_high) == (0.0, 0.8)
        assert categorize(level) == DC.EASY
        rough.append(p.roughness)
    assert 0 <= min(rough) and max(rough) <= 0.6


@pytest.mark.parametrize("mode", [5, 8])
def test_dr_bounds_and_sorting(mode):
    rng = np.random.default_rng(1)
    n = 100_000 if mode == 5 else 20_000
    rough = np.empty(n)
    for i in range(n):
        p = terrain_sample_dr(rng, mode).payload
        for f in TERRAIN_FIELDS_8D:
            assert 0 <= getattr(p, f) <= TERRAIN_MAX[f]
        for lo, hi in TERRAIN_RANGES:
            assert getattr(p, lo) <= getattr(p, hi)
        rough[i] = p.roughness
    if mode == 5:
        assert stats.kstest(rough, stats.uniform(0, 10).cdf).statistic < 0.01


# -- categorize ------------------------------------------------------------------


def test_categorize_examples():
    assert categorize(T(stump_high=2.5, pit_high=6.5, roughness=5.0)) == DC.EXTREMELY_CHALLENGING
    assert categorize(T()) == DC.EASY
    assert categorize(T(stump_high=2.4)) == DC.CHALLENGING
    assert categorize(T(pit_high=6.0, roughness=4.5)) == DC.VERY_CHALLENGING


def test_categorize_monotone():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        level = terrain_sample_dr(rng, 8)
        name = TERRAIN_FIELDS_8D[int(rng.integers(8))]
        up = apply_terrain_edit(level, name, float(rng.uniform(0, 3)), child_id=1)
        assert categorize(up) >= categorize(level)


# -- editing -----------------------------------------------------------------------


def test_steps_edit_by_one():
    rng = np.random.default_rng(3)
    level = T(stair_high=1.0, stair_steps=1)
    seen = set()
    for i in range(500):
        child = terrain_edit(level, rng, child_id=i + 1)
        if child.payload.stair_steps != 1:
            seen.add(child.payload.stair_steps)
    assert seen == {0, 2}


def test_clamp_at_max():
    level = T(stump_high=5.0)
    child = apply_terrain_edit(level, "stump_high", 0.2, child_id=2)
    assert child.payload.stump_high == 5.0
    assert (child.parent_id, child.generation) == (level.id, 1)


def test_edit_rejects_foreign_parameter():
    with pytest.raises(ValueError):
        apply_terrain_edit(T(), "stump_low", 0.2)


def _multiset_changes(a: TerrainPayload, b: TerrainPayload) -> int:
    changed = 0
    paired = {n for pair in TERRAIN_RANGES for n in pair}
    for lo, hi in TERRAIN_RANGES:
        pa = sorted((getattr(a, lo), getattr(a, hi)))
        pb = sorted((getattr(b, lo), getattr(b, hi)))
        changed += sum(not np.isclose(x, y) for x, y in zip(pa, pb)) and 1
    for f in TERRAIN_FIELDS_8D:
        if f not in paired:
            changed += getattr(a, f) != getattr(b, f)
    return changed


@pytest.mark.parametrize("mode", [5, 8])
def test_edit_changes_exactly_one_parameter(mode):
    rng = np.random.default_rng(4)
    for i in range(10_000):
        level = terrain_sample_dr(rng, mode) if i % 2 else terrain_easy_init(rng, mode)
        child = terrain_edit(level, rng, child_id=1)
        assert _multiset_changes(level.payload, child.payload) == 1
        child.payload.validate()


def test_edit_sizes():
    rng = np.random.default_rng(5)
    level = T(mode=8, stump_low=1.0, stump_high=2.0, stair_low=1.0, stair_high=2.0, stair_steps=4,
              roughness=5.0, pit_low=3.0, pit_high=5.0)
    for i in range(2000):
        child = terrain_edit(level, rng, child_id=1)
        for f in TERRAIN_FIELDS_8D:
            d = abs(getattr(child.payload, f) - getattr(level.payload, f))
            if d:
                if f == "roughness":
                    assert d <= 0.6
                else:
                    assert d == pytest.approx(et.EDIT_SIZE[f])


# -- course and dynamics ---------------------------------------------------------------


def test_heightfield_pure():
    a = heightfield(T(seed=9, roughness=3.0, stump_high=1.0))
    b = heightfield(T(seed=9, roughness=3.0, stump_high=1.0))
    c = heightfield(T(seed=10, roughness=3.0, stump_high=1.0))
    assert np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])


def _run(level, policy, limit=et.MAX_STEPS):
    state, obs = terrain_reset(level)
    total = 0.0
    rewards = []
    while not state.done:
        state, obs, r, _ = terrain_step(state, policy(obs))
        rewards.append(r)
    return state, rewards


def test_flat_course_constant_thrust():
    state, rewards = _run(T(), lambda o: [1.0, 0.0])
    assert state.success and sum(rewards) > 0


def test_fall_penalty():
    state, rewards = _run(T(stump_high=4.0, seed=3), lambda o: [1.0, 0.0])
    assert not state.success
    assert rewards[-1] <= et.FALL_PENALTY + et.PROGRESS_SCALE * et.MAX_SPEED


def test_rough_ground_speed_limit():
    state, rewards = _run(T(roughness=9.0), lambda o: [1.0, 0.0])
    assert rewards[-1] < -50


def test_terrain_determinism():
    level = T(stump_high=1.0, pit_high=2.0, roughness=2.0, seed=4)
    acts = np.random.default_rng(0).uniform(-1, 1, size=(2000, 2))
    runs = []
    for _ in range(2):
        state, _ = terrain_reset(level)
        rewards = []
        for a in acts:
            if state.done:
                break
            state, _, r, _ = terrain_step(state, a)
            rewards.append(r)
        runs.append(rewards)
    assert runs[0] == runs[1]


def test_action_arity():
    state, _ = terrain_reset(T())
    with pytest.raises(ValueError):
        terrain_step(state, [1.0])


def test_scripted_hopper_clears_moderate_course():
    """A policy that hops only before obstacles clears a moderate course."""

    def hopper(o):
        near = o[4] < 0.15 and o[8] == 0
        return [1.0 if o[0] < min(0.95, o[3]) else 0.0, 1.0 if near else 0.0]

    state, _ = _run(T(stump_high=1.5, pit_high=3.0, stair_high=0.5, stair_steps=3, seed=2), hopper)
    assert state.success


def test_harder_genotype_lower_return():
    """Difficulty is monotone for a fixed scripted policy: an extreme course yields a fall."""

    def hopper(o):
        return [1.0 if o[0] < min(0.95, o[3]) else 0.0, 1.0 if o[4] < 0.15 and o[8] == 0 else 0.0]

    easy = sum(_run(T(stump_high=0.4, pit_high=0.8, seed=2), hopper)[1])
    hard = sum(_run(T(stump_high=5.0, pit_high=10.0, roughness=5.0, seed=2), hopper)[1])
    assert hard < easy
