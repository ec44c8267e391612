"""Bayesian flow for the discrete mark variable.

Parameters live on the probability simplex with a uniform prior. The
accuracy schedule is ``beta(t) = beta1 * t**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .math_core import Rng, log_softmax, softmax

DEFAULT_BETA1 = 1.0


@dataclass(frozen=True)
class DiscreteSchedule:
    beta1: float = DEFAULT_BETA1

    def __post_init__(self):
        if not self.beta1 > 0:
            raise ValueError("beta1 must be positive")

    def beta(self, t):
        return self.beta1 * np.square(np.asarray(t, dtype=np.float64))


def uniform_prior(M: int) -> np.ndarray:
    return np.full(M, 1.0 / M)


def sender_mean(marks, alpha, M: int) -> np.ndarray:
    """``alpha * (M e_m - 1)`` for each mark (broadcast over leading dims)."""
    onehot = np.eye(M)[np.asarray(marks)]
    return np.asarray(alpha, dtype=np.float64)[..., None] * (M * onehot - 1.0)


def sender_sample_disc(m, alpha, M: int, rng: Rng, z=None) -> np.ndarray:
    m_arr = np.asarray(m)
    if np.any(m_arr < 0) or np.any(m_arr >= M):
        raise ValueError(f"mark outside [0, {M})")
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("accuracy must be positive")
    mean = sender_mean(m_arr, alpha, M)
    if z is None:
        z = rng.normal(mean.shape)
    return mean + np.sqrt(alpha * M)[..., None] * z


def bayes_update_disc(probs, y) -> np.ndarray:
    """``exp(y) * probs``, renormalised in log space."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    return softmax(logp + np.asarray(y, dtype=np.float64))


def flow_sample_disc(m, t, sched: DiscreteSchedule, M: int, rng: Rng) -> np.ndarray:
    """``softmax(y)`` with ``y ~ N(beta(t)(M e_m - 1), beta(t) M I)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    beta = sched.beta(t)
    m_arr = np.asarray(m)
    beta = np.broadcast_to(beta, np.broadcast(m_arr, beta).shape)
    mean = sender_mean(m_arr, beta, M)
    y = mean + np.sqrt(beta * M)[..., None] * rng.normal(mean.shape)
    return softmax(y)


def flow_logits_disc(m, t, sched: DiscreteSchedule, M: int, rng: Rng) -> np.ndarray:
    """Log-probabilities of a flow sample; avoids underflow at large ``beta``."""
    t = np.asarray(t, dtype=np.float64)
    beta = np.broadcast_to(sched.beta(t), np.broadcast(np.asarray(m), t).shape)
    mean = sender_mean(np.asarray(m), beta, M)
    y = mean + np.sqrt(beta * M)[..., None] * rng.normal(mean.shape)
    return log_softmax(y)


def alpha_step_disc(i, K: int, beta1: float):
    """``beta(i/K) - beta((i-1)/K) = beta1 (2i - 1) / K**2``."""
    i_arr = np.asarray(i)
    if np.any(i_arr < 1) or np.any(i_arr > K):
        raise IndexError(f"step index must be in [1, {K}]")
    out = beta1 * (2.0 * i_arr - 1.0) / (K * K)
    return float(out) if out.ndim == 0 else out
