"""Bayesian flow for the continuous interval variable.

The input distribution is ``N(mu, 1/rho)`` with prior ``(0, 1)``; the
accuracy schedule is ``gamma(t) = 1 - sigma1**(2t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .math_core import Rng

DEFAULT_SIGMA1 = 0.001


class NonPositiveAccuracy(ValueError):
    pass


@dataclass(frozen=True)
class ContinuousParams:
    mu: float
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("precision must be positive")


PRIOR = ContinuousParams(0.0, 1.0)


@dataclass(frozen=True)
class ContinuousSchedule:
    sigma1: float = DEFAULT_SIGMA1

    def __post_init__(self):
        if not 0.0 < self.sigma1 < 1.0:
            raise ValueError("sigma1 must lie in (0, 1)")

    def gamma(self, t):
        return 1.0 - np.power(self.sigma1, 2.0 * np.asarray(t, dtype=np.float64))


def _check_alpha(alpha) -> None:
    if np.any(np.asarray(alpha) <= 0):
        raise NonPositiveAccuracy("accuracy must be positive")


def sender_sample_cont(tau, alpha, rng: Rng, z=None):
    """``tau + z / sqrt(alpha)``; ``z`` is drawn from ``rng`` unless given."""
    _check_alpha(alpha)
    tau = np.asarray(tau, dtype=np.float64)
    if z is None:
        z = rng.normal(np.broadcast(tau, np.asarray(alpha)).shape or None)
    return tau + np.sqrt(1.0 / np.asarray(alpha, dtype=np.float64)) * z


def bayes_update_cont(p: ContinuousParams, y: float, alpha: float) -> ContinuousParams:
    _check_alpha(alpha)
    rho = p.rho + alpha
    return ContinuousParams((p.mu * p.rho + y * alpha) / rho, rho)


def bayes_update_cont_arrays(mu, rho, y, alpha):
    """Vectorised conjugate update on parameter arrays."""
    _check_alpha(alpha)
    rho_new = rho + alpha
    return (mu * rho + y * alpha) / rho_new, rho_new


def flow_sample_cont(tau, t, sched: ContinuousSchedule, rng: Rng, variance: str = "standard"):
    """Sample ``mu`` from the Bayesian flow at time ``t``; returns ``(mu, rho)``.

    ``variance="standard"`` uses ``gamma (1 - gamma)``. ``"scaled"`` uses the
    alternative ``|tau| (1 - gamma)``; the absolute value keeps it defined for
    negative normalized intervals.
    """
    tau = np.asarray(tau, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    rest = np.power(sched.sigma1, 2.0 * t)  # 1 - gamma, without cancellation
    gamma = 1.0 - rest
    if variance == "standard":
        var = gamma * rest
    elif variance == "scaled":
        var = np.abs(tau) * rest
    else:
        raise ValueError(f"unknown flow variance {variance!r}")
    shape = np.broadcast(tau, t).shape
    z = rng.normal(shape or None)
    mu = gamma * tau + np.sqrt(var) * z
    rho = 1.0 / rest
    if mu.ndim == 0:
        return ContinuousParams(float(mu), float(rho))
    return mu, np.broadcast_to(rho, shape).copy()


def alpha_step_cont(i, K: int, sigma1: float):
    """Per-step accuracy ``sigma1**(-2i/K) * (1 - sigma1**(2/K))`` of the K-step sampler."""
    i_arr = np.asarray(i)
    if np.any(i_arr < 1) or np.any(i_arr > K):
        raise IndexError(f"step index must be in [1, {K}]")
    out = np.power(sigma1, -2.0 * i_arr / K) * (1.0 - np.power(sigma1, 2.0 / K))
    return float(out) if out.ndim == 0 else out
