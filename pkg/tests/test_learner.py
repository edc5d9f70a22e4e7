import math

import numpy as np
import pytest

from accel.core import Trajectory
from accel.learner import (
    CATEGORICAL,
    GAUSSIAN,
    Adam,
    Architecture,
    Batch,
    Categorical,
    NonFiniteLossError,
    PolicyParams,
    PPOConfig,
    RewardScaler,
    compute_gae,
    distribution,
    forward,
    init_params,
    load_checkpoint,
    policy_forward,
    ppo_loss_and_grad,
    ppo_update,
    save_checkpoint,
)


def brute_gae(r, v, dones, boot, gamma, lam):
    T = len(r)
    nxt = list(v[1:]) + [boot]
    delta = [r[t] + gamma * nxt[t] * (1 - dones[t]) - v[t] for t in range(T)]
    adv = []
    for t in range(T):
        total, coef = 0.0, 1.0
        for k in range(t, T):
            total += coef * delta[k]
            if dones[k]:
                break
            coef *= gamma * lam
        adv.append(total)
    return np.array(adv), np.array(delta)


def make_traj(rng, T, p_done=0.2):
    dones = rng.random(T) < p_done
    boot = 0.0 if dones[-1] else float(rng.normal())
    return Trajectory(np.zeros((T, 1)), np.zeros(T), rng.normal(size=T), rng.normal(size=T), dones, boot)


# -- GAE -----------------------------------------------------------------------------


def test_gae_hand_example():
    t = Trajectory(np.zeros((3, 1)), np.zeros(3), np.array([0, 0, 1.0]), np.full(3, 0.5),
                   np.array([False, False, True]), 0.0)
    adv, ret, delta = compute_gae(t, 1.0, 1.0)
    assert np.allclose(delta, [0, 0, 0.5])
    assert np.allclose(adv, [0.5, 0.5, 0.5])
    assert np.allclose(ret, adv + 0.5)


def test_gae_zero_signal():
    t = Trajectory(np.zeros((4, 1)), np.zeros(4), np.zeros(4), np.zeros(4), np.array([0, 0, 1, 0], bool), 0.0)
    assert np.all(compute_gae(t, 0.99, 0.95)[0] == 0)


def test_gae_lambda_zero_is_td():
    rng = np.random.default_rng(0)
    t = make_traj(rng, 50)
    adv, _, delta = compute_gae(t, 0.99, 0.0)
    assert np.array_equal(adv, delta)


def test_gae_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        T = int(rng.integers(1, 80))
        t = make_traj(rng, T)
        g, lam = rng.random(), rng.random()
        adv, _, delta = compute_gae(t, g, lam)
        b_adv, b_delta = brute_gae(t.rewards, t.values, t.dones, t.bootstrap_value, g, lam)
        assert np.allclose(delta, b_delta, atol=1e-12)
        assert np.allclose(adv, b_adv, atol=1e-10)


# -- network / distributions ----------------------------------------------------------


def test_zero_weights_uniform_and_zero_value():
    arch = Architecture(5, 4, (8,))
    params = PolicyParams(arch, np.zeros(arch.n_params))
    dist, v = policy_forward(params, np.ones(5))
    assert np.allclose(dist.probs, 0.25) and v == 0.0
    assert float(dist.entropy()) == pytest.approx(math.log(4), rel=0, abs=1e-15)


def test_categorical_normalized_and_deterministic():
    rng = np.random.default_rng(2)
    params = init_params(Architecture(6, 5, (16, 16)), rng)
    X = rng.normal(size=(100, 6))
    d1, v1 = policy_forward(params, X)
    d2, v2 = policy_forward(params, X)
    assert np.allclose(d1.probs.sum(axis=1), 1, atol=1e-9)
    assert np.array_equal(d1.logits, d2.logits) and np.array_equal(v1, v2)


def test_argmax_tie_breaks_low():
    assert Categorical(np.zeros((3, 8))).mode().tolist() == [0, 0, 0]
    assert Categorical(np.array([[0.0, 2.0, 2.0]])).mode().tolist() == [1]


def test_shape_mismatch():
    params = init_params(Architecture(3, 2, (4,)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(params, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        PolicyParams(params.arch, np.zeros(3))


def test_categorical_sampling_frequencies():
    d = Categorical(np.log(np.array([[0.2, 0.5, 0.3]])).repeat(100_000, axis=0))
    a = d.sample(np.random.default_rng(3))
    assert np.allclose(np.bincount(a, minlength=3) / len(a), [0.2, 0.5, 0.3], atol=0.01)


# -- PPO loss and gradient -------------------------------------------------------------------


def _toy_batch(rng, arch, n=12):
    X = rng.normal(size=(n, arch.obs_dim))
    if arch.dist == CATEGORICAL:
        acts = rng.integers(arch.action_dim, size=n)
    else:
        acts = rng.normal(size=(n, arch.action_dim))
    return Batch(X, acts, rng.normal(scale=0.3, size=n) - 1.0, rng.normal(size=n), rng.normal(size=n),
                 rng.normal(scale=0.1, size=n))


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("dist", [CATEGORICAL, GAUSSIAN])
@pytest.mark.parametrize("value_clip", [True, False])
def test_gradient_finite_differences(dist, value_clip):
    rng = np.random.default_rng(4)
    arch = Architecture(4, 3, (6, 5), dist)
    assert arch.n_params <= 200
    params = init_params(arch, rng)
    params.flat += rng.normal(scale=0.3, size=arch.n_params)
    batch = _toy_batch(rng, arch)
    cfg = PPOConfig(clip_range=0.2, value_clip=value_clip, entropy_coef=0.01)
    _, grad, _ = ppo_loss_and_grad(params, batch, cfg)
    fd = np.zeros_like(grad)
    h = 1e-6
    for i in range(arch.n_params):
        up, dn = params.flat.copy(), params.flat.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (ppo_loss_and_grad(params, batch, cfg, up)[0] - ppo_loss_and_grad(params, batch, cfg, dn)[0]) / (2 * h)
    assert _rel_err(grad, fd) < 1e-4


def test_unclipped_surrogate_is_vanilla_policy_gradient():
    """Two-step toy MDP: with no clipping at the behaviour policy the loss is -mean(A)."""
    rng = np.random.default_rng(5)
    arch = Architecture(2, 2, (4,))
    params = init_params(arch, rng)
    obs = np.array([[1.0, 0.0], [0.0, 1.0]])
    traj = Trajectory(obs, np.array([1, 0]), np.array([0.0, 1.0]), np.zeros(2), np.array([False, True]), 0.0)
    head, _, _, _ = forward(params, obs)
    logp = distribution(params, head, None).log_prob(traj.actions)
    adv, ret, _ = compute_gae(traj, 1.0, 1.0)
    batch = Batch(obs, traj.actions, logp, adv, ret, np.zeros(2))
    cfg = PPOConfig(clip_range=math.inf, value_coef=0.0, entropy_coef=0.0, value_clip=False)
    loss, grad, stats = ppo_loss_and_grad(params, batch, cfg)
    assert stats["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-6)
    # vanilla gradient: -mean(A * grad log pi), log pi differentiated numerically
    def mean_weighted_logp(flat):
        p = PolicyParams(arch, flat)
        h = forward(p, obs)[0]
        return -np.mean(adv * distribution(p, h, None).log_prob(traj.actions))
    fd = np.array([(mean_weighted_logp(params.flat + e * 1e-6) - mean_weighted_logp(params.flat - e * 1e-6)) / 2e-6
                   for e in np.eye(arch.n_params)])
    assert np.allclose(grad, fd, atol=1e-6)


def test_zero_learning_rate_is_identity():
    rng = np.random.default_rng(6)
    arch = Architecture(3, 2, (8,))
    params = init_params(arch, rng)
    traj = Trajectory(rng.normal(size=(10, 3)), rng.integers(2, size=10), rng.normal(size=10), rng.normal(size=10),
                      np.zeros(10, bool), 0.5, log_probs=np.full(10, math.log(0.5)))
    new, stats = ppo_update(params, [traj], PPOConfig(learning_rate=0.0), rng)
    assert new.flat.tobytes() == params.flat.tobytes()
    for key in ("policy_loss", "value_loss", "entropy", "clip_fraction", "grad_norm"):
        assert key in stats


def test_non_finite_loss_raises():
    rng = np.random.default_rng(7)
    arch = Architecture(3, 2, (4,))
    params = init_params(arch, rng)
    traj = Trajectory(np.full((4, 3), np.nan), np.zeros(4, int), np.zeros(4), np.zeros(4), np.zeros(4, bool), 0.0,
                      log_probs=np.zeros(4))
    with pytest.raises(NonFiniteLossError):
        ppo_update(params, [traj], PPOConfig(), rng)


def test_bandit_converges():
    rng = np.random.default_rng(8)
    arch = Architecture(1, 2, (8,))
    params = init_params(arch, rng)
    cfg = PPOConfig(gamma=0.99, learning_rate=3e-3, epochs=4)
    opt = Adam(arch.n_params, cfg.learning_rate, cfg.adam_eps)
    obs = np.ones((32, 1))
    for _ in range(200):
        head, values, _, _ = forward(params, obs)
        dist = distribution(params, head, None)
        acts = dist.sample(rng)
        rewards = (acts == 1).astype(float)
        traj = Trajectory(obs, acts, rewards, values, np.ones(32, bool), 0.0, dist.log_prob(acts))
        params, _ = ppo_update(params, [traj], cfg, rng, opt)
    dist, _ = policy_forward(params, np.ones(1))
    assert dist.probs[1] > 0.95


def test_gaussian_head_learns_mean():
    rng = np.random.default_rng(9)
    arch = Architecture(1, 2, (8,), GAUSSIAN)
    params = init_params(arch, rng)
    cfg = PPOConfig(learning_rate=3e-3, epochs=4, entropy_coef=0.0)
    opt = Adam(arch.n_params, cfg.learning_rate, cfg.adam_eps)
    obs = np.ones((64, 1))
    target = np.array([0.5, -0.5])
    for _ in range(300):
        head, values, log_std, _ = forward(params, obs)
        dist = distribution(params, head, log_std)
        acts = dist.sample(rng)
        rewards = -np.sum((acts - target) ** 2, axis=1)
        traj = Trajectory(obs, acts, rewards, values, np.ones(64, bool), 0.0, dist.log_prob(acts))
        params, _ = ppo_update(params, [traj], cfg, rng, opt)
    dist, _ = policy_forward(params, np.ones(1))
    assert np.allclose(dist.mean, target, atol=0.15)


def test_reward_scaler():
    sc = RewardScaler(0.99)
    rng = np.random.default_rng(10)
    r = rng.normal(scale=5.0, size=5000)
    sc.observe(r, np.zeros(5000, bool))
    assert sc.var > 1
    scaled = sc.scale(r)
    assert np.allclose(scaled * math.sqrt(sc.var + sc.eps), r)


def test_checkpoint_round_trip(tmp_path):
    arch = Architecture(5, 2, (7, 3), GAUSSIAN)
    params = init_params(arch, np.random.default_rng(11))
    path = tmp_path / "p.npz"
    save_checkpoint(path, params, {"update": 4})
    loaded, header = load_checkpoint(path)
    assert loaded.arch == arch and np.array_equal(loaded.flat, params.flat)
    assert header["update"] == 4 and header["version"] == 1
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.npz")
