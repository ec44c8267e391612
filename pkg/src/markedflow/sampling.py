"""K-step generation of the next event from a history embedding.

Starting from the priors, each step predicts ``(tau_hat, p_O)`` at
``t = (k-1)/K``, draws a mark ``m' ~ p_O``, draws a joint sender sample
centred at ``(tau_hat, alpha_d (M e_m' - 1))`` and folds it into the input
parameters with the conjugate updates. A final prediction at ``t = 1``
gives the sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .bfn_continuous import alpha_step_cont
from .bfn_discrete import alpha_step_disc
from .event_data import denormalize
from .joint import JointBlock
from .math_core import Rng
from .model import MarkedFlowModel


@dataclass
class SampleConfig:
    K: int = 100
    num_samples: int = 100
    seed: int = 0
    joint_noise: bool | None = None  # None follows the model
    point: str = "median"

    def __post_init__(self):
        if self.K < 1 or self.num_samples < 1:
            raise ValueError("K and num_samples must be >= 1")
        if self.point not in ("median", "mean"):
            raise ValueError("point must be 'median' or 'mean'")


@dataclass
class SampleTrace:
    """Bookkeeping of one batched generation run."""

    calls: int = 0
    rho: np.ndarray | None = None
    entropy: list[np.ndarray] = field(default_factory=list)
    min_theta_sum_err: float = 0.0


@dataclass
class GeneratedBatch:
    tau_norm: np.ndarray  # (R,) final clipped interval estimate, normalised
    tau: np.ndarray  # (R,) raw-scale intervals
    marks: np.ndarray  # (R,) argmax of the final output distribution
    p_final: np.ndarray  # (R, M)
    trace: SampleTrace


@torch.no_grad()
def generate_batch(h: Tensor, model: MarkedFlowModel, cfg: SampleConfig, rng: Rng, trace_entropy: bool = False) -> GeneratedBatch:
    """One independent draw per row of ``h`` (shape (R, D))."""
    if model.norm is None:
        raise ValueError("model has no normalisation statistics")
    R = h.shape[0]
    M = model.num_marks
    K = cfg.K
    dtype = h.dtype
    joint_noise = model.joint_noise if cfg.joint_noise is None else cfg.joint_noise
    c = model.cross_covariance() if joint_noise else torch.zeros(M, dtype=dtype)
    mu = torch.zeros(R, dtype=dtype)
    rho = torch.ones(R, dtype=dtype)
    log_theta = torch.full((R, M), -np.log(M), dtype=dtype)
    trace = SampleTrace()
    for k in range(1, K + 1):
        t = torch.full((R,), (k - 1) / K, dtype=dtype)
        out = model.psi(mu, log_theta.exp(), t, h)
        trace.calls += 1
        if trace_entropy:
            p = out.log_p_O.exp()
            trace.entropy.append((-(p * out.log_p_O).sum(-1)).numpy())
        m_draw = torch.as_tensor(rng.categorical(out.log_p_O.exp().numpy()), dtype=torch.long)
        a_c = torch.full((R,), alpha_step_cont(k, K, model.sigma1), dtype=dtype)
        a_d = torch.full((R,), alpha_step_disc(k, K, model.beta1), dtype=dtype)
        blk = JointBlock(a_c, a_d, c, M)
        z_tau = torch.as_tensor(rng.normal(R), dtype=dtype)
        z_mark = torch.as_tensor(rng.normal((R, M)), dtype=dtype)
        y_tau, y_mark = blk.sample(out.tau_hat, m_draw, z_tau, z_mark)
        rho_new = rho + a_c
        mu = (mu * rho + y_tau * a_c) / rho_new
        rho = rho_new
        log_theta = torch.log_softmax(log_theta + y_mark, dim=-1)
        trace.min_theta_sum_err = max(trace.min_theta_sum_err, float((log_theta.exp().sum(-1) - 1).abs().max()))
    out = model.psi(mu, log_theta.exp(), torch.ones(R, dtype=dtype), h)
    trace.calls += 1
    trace.rho = rho.numpy()
    p_final = out.log_p_O.exp().numpy()
    tau_norm = out.tau_hat.numpy()
    return GeneratedBatch(tau_norm, np.asarray(denormalize(tau_norm, model.norm)).reshape(R), p_final.argmax(-1), p_final, trace)


def generate_next(h: Tensor, model: MarkedFlowModel, cfg: SampleConfig, rng: Rng):
    """Single draw for one history embedding: ``(tau, mark, p_O_final)``."""
    g = generate_batch(h.reshape(1, -1), model, cfg, rng)
    return float(g.tau[0]), int(g.marks[0]), g.p_final[0]


@dataclass
class PointPrediction:
    tau_point: np.ndarray  # (E,)
    mark_point: np.ndarray  # (E,)
    tau_samples: np.ndarray  # (E, L)
    p_mean: np.ndarray  # (E, M)


def predict(h: Tensor, model: MarkedFlowModel, cfg: SampleConfig, rng: Rng, chunk_rows: int = 20000) -> PointPrediction:
    """``num_samples`` draws per history row, reduced to point predictions."""
    E = h.shape[0]
    L = cfg.num_samples
    rows = h.repeat_interleave(L, dim=0)
    taus, ps = [], []
    for lo in range(0, rows.shape[0], chunk_rows):
        g = generate_batch(rows[lo : lo + chunk_rows], model, cfg, rng)
        taus.append(g.tau)
        ps.append(g.p_final)
    tau = np.concatenate(taus).reshape(E, L)
    p = np.concatenate(ps).reshape(E, L, -1)
    p_mean = p.mean(axis=1)
    point = np.median(tau, axis=1) if cfg.point == "median" else tau.mean(axis=1)
    return PointPrediction(point, p_mean.argmax(-1), tau, p_mean)


def predict_point(h: Tensor, model: MarkedFlowModel, cfg: SampleConfig, rng: Rng) -> tuple[float, int]:
    pp = predict(h.reshape(1, -1), model, cfg, rng)
    return float(pp.tau_point[0]), int(pp.mark_point[0])
