"""Regret estimates used to score levels."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from accel.core import RegretScore, Trajectory
from accel.learner import compute_gae


def positive_value_loss(td_errors: Sequence[float], gamma: float, lam: float) -> RegretScore:
    """Mean over timesteps of the forward discounted TD-error sum, clipped at zero.

    For T collected TD errors, timestep t sums ``(gamma*lam)**(k-t) * delta_k``
    over k = t..T-1; the clipped sums are averaged over the T timesteps.
    """
    deltas = np.asarray(td_errors, dtype=np.float64)
    T = len(deltas)
    if T == 0:
        raise ValueError("positive value loss needs at least one TD error")
    decay = gamma * lam
    total, running = 0.0, 0.0
    for t in range(T - 1, -1, -1):
        running = deltas[t] + decay * running
        if running > 0:
            total += running
    return RegretScore(total / T)


def trajectory_regret(traj: Trajectory, gamma: float, lam: float) -> RegretScore:
    """Positive value loss per episode in the segment, averaged over episodes."""
    _, _, deltas = compute_gae(traj, gamma, lam)
    scores = [positive_value_loss(deltas[s], gamma, lam).value for s in traj.episode_slices()]
    return RegretScore(float(np.mean(scores)))


def easy_score(traj: Trajectory, regret: RegretScore) -> float:
    """Episode return minus regret: high for levels solved with little left to learn.

    Segments holding several episodes use the mean episode return.
    """
    return float(np.mean(traj.episode_returns())) - regret.value
