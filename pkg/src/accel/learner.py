"""Student policy: a small actor-critic MLP in numpy, GAE and the PPO update.

Gradients are derived by hand (no autodiff), which keeps the whole update in
float64 numpy and lets the tests check them against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from accel.core import Trajectory

CATEGORICAL, GAUSSIAN = "categorical", "gaussian"
CHECKPOINT_FORMAT = "accel-policy"
CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2 * math.pi)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    obs_dim: int
    action_dim: int  # number of discrete actions, or Gaussian dimensionality
    hidden: tuple[int, ...] = (64, 64)
    dist: str = CATEGORICAL
    activation: str = "tanh"

    def __post_init__(self):
        if self.dist not in (CATEGORICAL, GAUSSIAN):
            raise ValueError(f"unknown distribution {self.dist!r}")
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")

    def tower_shapes(self, out: int) -> list[tuple[int, int]]:
        sizes = [self.obs_dim, *self.hidden, out]
        return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]

    @property
    def n_params(self) -> int:
        n = sum(a * b + b for a, b in self.tower_shapes(self.action_dim))
        n += sum(a * b + b for a, b in self.tower_shapes(1))
        if self.dist == GAUSSIAN:
            n += self.action_dim
        return n


@dataclass
class PolicyParams:
    arch: Architecture
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got {self.flat.shape}")

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.flat.copy())

    def views(self, flat: Optional[np.ndarray] = None):
        """(actor layers, critic layers, log_std) as views into ``flat``."""
        flat = self.flat if flat is None else flat
        off = 0

        def take(shapes):
            nonlocal off
            layers = []
            for a, b in shapes:
                W = flat[off:off + a * b].reshape(a, b)
                off += a * b
                bias = flat[off:off + b]
                off += b
                layers.append((W, bias))
            return layers

        actor = take(self.arch.tower_shapes(self.arch.action_dim))
        critic = take(self.arch.tower_shapes(1))
        log_std = flat[off:off + self.arch.action_dim] if self.arch.dist == GAUSSIAN else None
        return actor, critic, log_std


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    flip = shape[0] < shape[1]
    q, r = np.linalg.qr(a.T if flip else a)
    q = q * np.sign(np.diag(r))
    return gain * (q.T if flip else q)


def init_params(arch: Architecture, rng: np.random.Generator) -> PolicyParams:
    params = PolicyParams(arch, np.zeros(arch.n_params))
    actor, critic, log_std = params.views()
    for tower, out_gain in ((actor, 0.01), (critic, 1.0)):
        for i, (W, _) in enumerate(tower):
            gain = out_gain if i == len(tower) - 1 else math.sqrt(2)
            W[...] = _orthogonal(rng, W.shape, gain)
    if log_std is not None:
        log_std[...] = 0.0
    return params


# -- forward pass and distributions ------------------------------------------


def _tower_forward(layers, X):
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def _tower_backward(layers, acts, grad_out, grads):
    """Accumulate parameter gradients of a tower into ``grads`` (list of (dW, db))."""
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        dW, db = grads[i]
        dW += acts[i].T @ g
        db += g.sum(axis=0)
        if i > 0:
            g = (g @ W.T) * (1.0 - acts[i] ** 2)


def forward(params: PolicyParams, X: np.ndarray):
    """Batched forward: returns (policy head output, values, log_std, caches)."""
    actor, critic, log_std = params.views()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.arch.obs_dim:
        raise ValueError(f"observation has {X.shape[1]} features, network expects {params.arch.obs_dim}")
    head, a_acts = _tower_forward(actor, X)
    v, c_acts = _tower_forward(critic, X)
    return head, v[:, 0], log_std, (a_acts, c_acts)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class Categorical:
    logits: np.ndarray

    @property
    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.probs, axis=-1)
        u = rng.random(cdf.shape[:-1] + (1,))
        idx = (u > cdf).sum(axis=-1)
        return np.minimum(idx, self.logits.shape[-1] - 1)

    def mode(self) -> np.ndarray:
        # np.argmax breaks ties toward the lowest action id
        return np.argmax(self.logits, axis=-1)

    def log_prob(self, actions: np.ndarray) -> np.ndarray:
        lp = self.log_probs
        return np.take_along_axis(lp, np.asarray(actions, dtype=np.intp)[..., None], axis=-1)[..., 0]

    def entropy(self) -> np.ndarray:
        lp = self.log_probs
        return -(np.exp(lp) * lp).sum(axis=-1)


@dataclass
class DiagGaussian:
    mean: np.ndarray
    log_std: np.ndarray

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.exp(self.log_std) * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean

    def log_prob(self, actions: np.ndarray) -> np.ndarray:
        z = (actions - self.mean) / np.exp(self.log_std)
        return (-0.5 * z**2 - self.log_std - 0.5 * LOG_2PI).sum(axis=-1)

    def entropy(self) -> np.ndarray:
        h = (self.log_std + 0.5 * (1.0 + LOG_2PI)).sum()
        return np.full(self.mean.shape[:-1], h)


def distribution(params: PolicyParams, head: np.ndarray, log_std):
    if params.arch.dist == CATEGORICAL:
        return Categorical(head)
    return DiagGaussian(head, np.broadcast_to(log_std, head.shape))


def policy_forward(params: PolicyParams, observation: np.ndarray):
    """Action distribution and value for one observation (or a batch)."""
    obs = np.asarray(observation, dtype=np.float64)
    single = obs.ndim == 1
    head, values, log_std, _ = forward(params, obs)
    dist = distribution(params, head, log_std)
    if single:
        dist = distribution(params, head[0], log_std)
        return dist, float(values[0])
    return dist, values


# -- advantage estimation ----------------------------------------------------


def compute_gae(traj: Trajectory, gamma: float, lam: float):
    """GAE advantages, value targets and TD errors, cut at episode boundaries."""
    r = np.asarray(traj.rewards, dtype=np.float64)
    v = np.asarray(traj.values, dtype=np.float64)
    nonterminal = 1.0 - np.asarray(traj.dones, dtype=np.float64)
    next_v = np.append(v[1:], traj.bootstrap_value)
    deltas = r + gamma * next_v * nonterminal - v
    adv = np.zeros_like(deltas)
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        running = deltas[t] + gamma * lam * nonterminal[t] * running
        adv[t] = running
    return adv, adv + v, deltas


# -- PPO ---------------------------------------------------------------------


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    rollout_length: int = 256
    epochs: int = 5
    minibatches: int = 1
    clip_range: float = 0.2
    workers: int = 32
    learning_rate: float = 1e-4
    adam_eps: float = 1e-5
    max_grad_norm: float = 0.5
    value_clip: bool = True
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    return_normalization: bool = False
    normalize_advantages: bool = True

    def __post_init__(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if not self.clip_range > 0:
            raise ValueError("clip_range must be > 0")
        if self.epochs < 1 or self.minibatches < 1 or self.rollout_length < 1 or self.workers < 1:
            raise ValueError("epochs, minibatches, rollout_length and workers must be >= 1")


GRID_PPO = PPOConfig()
TERRAIN_PPO = PPOConfig(
    gamma=0.99, gae_lambda=0.9, rollout_length=2000, epochs=5, minibatches=32, workers=16,
    learning_rate=3e-4, value_clip=False, entropy_coef=1e-3, return_normalization=True,
)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    old_values: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)

    def subset(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in
                       ("obs", "actions", "old_log_probs", "advantages", "returns", "old_values")))


def ppo_loss_and_grad(params: PolicyParams, batch: Batch, config: PPOConfig, flat: Optional[np.ndarray] = None):
    """Total PPO loss (clipped surrogate + value loss - entropy bonus) and its gradient."""
    flat = params.flat if flat is None else flat
    p = PolicyParams(params.arch, flat)
    actor, critic, log_std = p.views()
    head, values, _, (a_acts, c_acts) = forward(p, batch.obs)
    n = len(batch)
    eps = config.clip_range

    if params.arch.dist == CATEGORICAL:
        lp_all = log_softmax(head)
        probs = np.exp(lp_all)
        acts = np.asarray(batch.actions, dtype=np.intp)
        logp = lp_all[np.arange(n), acts]
        ent = -(probs * lp_all).sum(axis=1)
    else:
        std = np.exp(log_std)
        z = (batch.actions - head) / std
        logp = (-0.5 * z**2 - log_std - 0.5 * LOG_2PI).sum(axis=1)
        ent = np.full(n, (log_std + 0.5 * (1.0 + LOG_2PI)).sum())

    ratio = np.exp(logp - batch.old_log_probs)
    A = batch.advantages
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1 - eps, 1 + eps) * A
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    d_logp = np.where(unclipped, -ratio * A / n, 0.0)

    R = batch.returns
    if config.value_clip:
        delta_v = values - batch.old_values
        v_clipped = batch.old_values + np.clip(delta_v, -eps, eps)
        l1, l2 = (values - R) ** 2, (v_clipped - R) ** 2
        value_loss = 0.5 * np.mean(np.maximum(l1, l2))
        inside = np.abs(delta_v) < eps
        d_values = np.where(l1 >= l2, values - R, (v_clipped - R) * inside) / n
    else:
        value_loss = 0.5 * np.mean((values - R) ** 2)
        d_values = (values - R) / n
    entropy = float(np.mean(ent))
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    grad = np.zeros_like(flat)
    g = PolicyParams(params.arch, grad)
    g_actor, g_critic, g_log_std = g.views()
    if params.arch.dist == CATEGORICAL:
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), acts] = 1.0
        d_head = d_logp[:, None] * (onehot - probs)
        # dH/dlogits = -p * (log p + H)
        d_head += (config.entropy_coef / n) * probs * (lp_all + ent[:, None])
    else:
        d_head = d_logp[:, None] * (z / std)
        g_log_std += (d_logp[:, None] * (z**2 - 1.0)).sum(axis=0)
        g_log_std -= config.entropy_coef
    _tower_backward(actor, a_acts, d_head, g_actor)
    _tower_backward(critic, c_acts, (config.value_coef * d_values)[:, None], g_critic)

    stats = {
        "loss": float(total),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "approx_kl": float(np.mean(batch.old_log_probs - logp)),
    }
    return float(total), grad, stats


class Adam:
    def __init__(self, n: int, lr: float, eps: float = 1e-8, betas=(0.9, 0.999)):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}


def make_batch(trajectories: Sequence[Trajectory], config: PPOConfig) -> Batch:
    obs, acts, logps, advs, rets, vals = [], [], [], [], [], []
    for traj in trajectories:
        if traj.log_probs is None:
            raise ValueError("trajectory lacks behaviour log-probabilities")
        adv, ret, _ = compute_gae(traj, config.gamma, config.gae_lambda)
        obs.append(np.asarray(traj.observations, dtype=np.float64))
        acts.append(np.asarray(traj.actions))
        logps.append(np.asarray(traj.log_probs, dtype=np.float64))
        advs.append(adv)
        rets.append(ret)
        vals.append(np.asarray(traj.values, dtype=np.float64))
    return Batch(np.concatenate(obs), np.concatenate(acts), np.concatenate(logps),
                 np.concatenate(advs), np.concatenate(rets), np.concatenate(vals))


def ppo_update(params: PolicyParams, trajectories: Sequence[Trajectory], config: PPOConfig,
               rng: np.random.Generator, optimizer: Optional[Adam] = None):
    """Run ``epochs`` passes of ``minibatches`` shuffled splits.  Returns (params', stats)."""
    if optimizer is None:
        optimizer = Adam(params.arch.n_params, config.learning_rate, config.adam_eps)
    batch = make_batch(trajectories, config)
    if config.normalize_advantages:
        a = batch.advantages
        batch.advantages = (a - a.mean()) / (a.std() + 1e-8)
    flat = params.flat.copy()
    n = len(batch)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, config.minibatches):
            if len(chunk) == 0:
                continue
            loss, grad, stats = ppo_loss_and_grad(params, batch.subset(chunk), config, flat)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NonFiniteLossError(f"non-finite PPO loss {loss}; stats={stats}")
            norm = float(np.linalg.norm(grad))
            if config.max_grad_norm and norm > config.max_grad_norm:
                grad = grad * (config.max_grad_norm / (norm + 1e-6))
            flat = optimizer.step(flat, grad)
            stats["grad_norm"] = norm
            history.append(stats)
    summary = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    summary["samples"] = n
    return PolicyParams(params.arch, flat), summary


class RewardScaler:
    """Divides rewards by a running std of the discounted return."""

    def __init__(self, gamma: float, eps: float = 1e-8):
        self.gamma, self.eps = gamma, eps
        self.count = 1e-4
        self.mean = 0.0
        self.var = 1.0

    def _update(self, x: np.ndarray) -> None:
        b_mean, b_var, b_n = float(np.mean(x)), float(np.var(x)), len(x)
        delta = b_mean - self.mean
        tot = self.count + b_n
        self.mean += delta * b_n / tot
        m2 = self.var * self.count + b_var * b_n + delta**2 * self.count * b_n / tot
        self.var = m2 / tot
        self.count = tot

    def observe(self, rewards: np.ndarray, dones: np.ndarray) -> None:
        ret, out = 0.0, []
        for r, d in zip(rewards, dones):
            ret = ret * self.gamma + r
            out.append(ret)
            if d:
                ret = 0.0
        self._update(np.asarray(out))

    def scale(self, rewards: np.ndarray) -> np.ndarray:
        return np.asarray(rewards, dtype=np.float64) / math.sqrt(self.var + self.eps)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, params: PolicyParams, extra: Optional[dict] = None) -> None:
    arch = asdict(params.arch)
    arch["hidden"] = list(arch["hidden"])
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "arch": arch, **(extra or {})}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), params=params.flat)


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        flat = data["params"].copy()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a policy checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    a = header["arch"]
    arch = Architecture(a["obs_dim"], a["action_dim"], tuple(a["hidden"]), a["dist"], a["activation"])
    return PolicyParams(arch, flat), header
