"""Training with the discretised joint KL loss, and the variational bound.

For each event the loss draws a step ``k ~ U{1..K}``, samples the flow
parameters of interval and mark at ``t = (k-1)/K``, runs the output network
and estimates ``K * KL(p_S || p_R)`` between the joint sender at the step
accuracies and the receiver mixture with ``mc_samples`` reparameterised
draws. Flow samples are treated as inputs; the sender draw is
differentiated through so that the cross-covariance receives gradient.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import Tensor

from .bfn_continuous import DEFAULT_SIGMA1, ContinuousSchedule, alpha_step_cont, flow_sample_cont
from .bfn_discrete import DEFAULT_BETA1, DiscreteSchedule, alpha_step_disc, flow_logits_disc
from .event_data import Dataset, EncodedBatch, encode_sequences, fit_norm, intervalize, sequence_key
from .joint import kl_sample
from .math_core import LOG_2PI, Rng
from .model import MarkedFlowModel, build_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    K: int = 100
    sigma1: float = DEFAULT_SIGMA1
    beta1: float = DEFAULT_BETA1
    joint_noise: bool = True
    mc_samples: int = 1
    seed: int = 0
    batch_size: int = 1
    optimizer: str = "sgd"
    dim: int = 16
    layers: int = 1
    heads: int = 1
    psi_blocks: int = 2
    x_min: float = -1.0
    x_max: float = 1.0
    flow_variance: str = "standard"
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("epochs", "K", "mc_samples", "batch_size", "dim", "layers", "heads", "psi_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    def model_hparams(self, num_marks: int) -> dict:
        return dict(
            num_marks=num_marks, dim=self.dim, layers=self.layers, heads=self.heads, sigma1=self.sigma1,
            beta1=self.beta1, joint_noise=self.joint_noise, psi_blocks=self.psi_blocks, x_min=self.x_min,
            x_max=self.x_max, flow_variance=self.flow_variance,
        )


@dataclass
class LossNoise:
    """Every random quantity one loss evaluation consumes, for ``E`` events."""

    k: np.ndarray  # (E,) step indices in 1..K
    t: np.ndarray  # (E,)
    mu: np.ndarray  # (E,) flow sample of the interval mean
    log_theta: np.ndarray  # (E, M) flow sample of the mark parameters
    z_tau: np.ndarray  # (S, E)
    z_mark: np.ndarray  # (S, E, M)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    wall_time: float
    vlb: float | None = None


@dataclass
class TrainResult:
    model: MarkedFlowModel
    config: TrainConfig
    history: list[EpochRecord] = field(default_factory=list)
    rng: Rng | None = None


def draw_noise(
    tau: np.ndarray, marks: np.ndarray, model: MarkedFlowModel, K: int, mc_samples: int, rng: Rng, k=None
) -> LossNoise:
    E = tau.shape[0]
    M = model.num_marks
    if k is None:
        k = rng.integers(1, K + 1, E)
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), (E,)).copy()
    t = (k - 1) / K
    mu, _ = flow_sample_cont(tau, t, ContinuousSchedule(model.sigma1), rng, model.flow_variance)
    log_theta = flow_logits_disc(marks, t, DiscreteSchedule(model.beta1), M, rng)
    z_tau = rng.normal((mc_samples, E))
    z_mark = rng.normal((mc_samples, E, M))
    return LossNoise(k, t, np.asarray(mu), log_theta, z_tau, z_mark)


def concat_noise(parts: list[LossNoise]) -> LossNoise:
    return LossNoise(
        np.concatenate([p.k for p in parts]),
        np.concatenate([p.t for p in parts]),
        np.concatenate([p.mu for p in parts]),
        np.concatenate([p.log_theta for p in parts]),
        np.concatenate([p.z_tau for p in parts], axis=1),
        np.concatenate([p.z_mark for p in parts], axis=1),
    )


def event_loss(
    model: MarkedFlowModel, h: Tensor, tau: Tensor, marks: Tensor, noise: LossNoise, K: int
) -> Tensor:
    """Per-event loss estimate (shape (E,)) given fixed noise."""
    dtype = h.dtype
    k = noise.k
    alpha_c = torch.as_tensor(alpha_step_cont(k, K, model.sigma1), dtype=dtype).reshape(-1)
    alpha_d = torch.as_tensor(alpha_step_disc(k, K, model.beta1), dtype=dtype).reshape(-1)
    mu = torch.as_tensor(noise.mu, dtype=dtype)
    theta = torch.as_tensor(np.exp(noise.log_theta), dtype=dtype)
    t = torch.as_tensor(noise.t, dtype=dtype)
    out = model.psi(mu, theta, t, h)
    c = model.cross_covariance()
    z_tau = torch.as_tensor(noise.z_tau, dtype=dtype)
    z_mark = torch.as_tensor(noise.z_mark, dtype=dtype)
    kl = torch.stack(
        [kl_sample(tau, marks, out.tau_hat, out.log_p_O, alpha_c, alpha_d, c, z_tau[s], z_mark[s]) for s in range(z_tau.shape[0])]
    ).mean(0)
    return K * kl


def batch_tensors(batch: EncodedBatch, model: MarkedFlowModel):
    """History embeddings and flattened targets for every real event in ``batch``."""
    dtype = model.encoder.h0.dtype
    tau = torch.as_tensor(batch.tau_norm, dtype=dtype)
    marks = torch.as_tensor(batch.marks, dtype=torch.long)
    mask = torch.as_tensor(batch.mask)
    H = model.encoder(tau, marks)
    return H[:, :-1][mask], tau[mask], marks[mask]


def batch_loss(model: MarkedFlowModel, batch: EncodedBatch, K: int, mc_samples: int, rng: Rng, noise: LossNoise | None = None):
    h, tau, marks = batch_tensors(model=model, batch=batch)
    if noise is None:
        noise = draw_noise(tau.detach().numpy(), marks.numpy(), model, K, mc_samples, rng)
    per_event = event_loss(model, h, tau, marks, noise, K)
    return per_event.mean(), per_event


def loss_term(event: tuple[float, int], h: Tensor, model: MarkedFlowModel, rng: Rng, K: int = 100, mc_samples: int = 1) -> Tensor:
    """Loss estimate for one event given its history embedding; call ``.backward()`` for gradients."""
    dtype = model.encoder.h0.dtype
    tau = torch.tensor([event[0]], dtype=dtype)
    marks = torch.tensor([event[1]], dtype=torch.long)
    noise = draw_noise(tau.numpy(), marks.numpy(), model, K, mc_samples, rng)
    return event_loss(model, h.reshape(1, -1), tau, marks, noise, K)[0]


def padded_batch(encoded: EncodedBatch, rows: np.ndarray) -> EncodedBatch:
    n = int(encoded.lengths[rows].max())
    return EncodedBatch(encoded.tau_norm[rows, :n], encoded.marks[rows, :n], encoded.mask[rows, :n], encoded.lengths[rows])


def make_optimizer(model: MarkedFlowModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = model.trainable_parameters()
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr)
    return torch.optim.SGD(params, lr=cfg.lr)


def train(data: Dataset, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Fit a model on ``data`` (the training split).

    ``on_epoch(record, model, rng)`` is called after every epoch; it may fill
    in ``record.vlb`` before the record is logged.
    """
    if len(data) == 0:
        raise ValueError("training split is empty")
    rng = Rng(cfg.seed)
    model = build_model(cfg.seed, **cfg.model_hparams(data.num_marks))
    model.norm = fit_norm([intervalize(s) for s in data.sequences])
    encoded = encode_sequences(data.sequences, model.norm)
    opt = make_optimizer(model, cfg)
    result = TrainResult(model, cfg, rng=rng)
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        total, count = 0.0, 0
        model.train()
        for lo in range(0, n, cfg.batch_size):
            batch = padded_batch(encoded, order[lo : lo + cfg.batch_size])
            loss, per_event = batch_loss(model, batch, cfg.K, cfg.mc_samples, rng)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(per_event.detach().sum())
            count += per_event.numel()
        rec = EpochRecord(epoch, total / count, time.perf_counter() - start)
        result.history.append(rec)
        if on_epoch is not None:
            on_epoch(rec, model, rng)
        vlb_text = "" if rec.vlb is None else f" vlb={rec.vlb:.6g}"
        log.info("epoch=%d mean_loss=%.6g%s wall_time=%.3f", rec.epoch, rec.mean_loss, vlb_text, rec.wall_time)
    return result


@dataclass
class VLBReport:
    vlb: float
    diffusion: float
    recon_mark: float
    recon_time: float


@torch.no_grad()
def vlb(data: Dataset, model: MarkedFlowModel, rng: Rng, K: int = 100, batch_size: int = 64) -> VLBReport:
    """Negative variational bound in nats per event: K-step loss plus reconstruction at ``t = 1``.

    Each sequence draws its noise from ``rng.fork(sequence_key(seq))``, so the
    result does not depend on the order of ``data``.
    """
    if model.norm is None:
        raise ValueError("model has no normalisation statistics")
    encoded = encode_sequences(data.sequences, model.norm)
    keys = [sequence_key(s) for s in data.sequences]
    per_event = []
    s1 = model.sigma1
    M = model.num_marks
    for lo in range(0, len(data), batch_size):
        rows = np.arange(lo, min(lo + batch_size, len(data)))
        batch = padded_batch(encoded, rows)
        h, tau, marks = batch_tensors(batch, model)
        tau_np, marks_np = tau.numpy(), marks.numpy()
        parts, mus, log_thetas = [], [], []
        off = 0
        for r, n in zip(rows, batch.lengths):
            sub = rng.fork(keys[r])
            sl = slice(off, off + int(n))
            parts.append(draw_noise(tau_np[sl], marks_np[sl], model, K, 1, sub))
            ones = np.ones(int(n))
            mu, _ = flow_sample_cont(tau_np[sl], ones, ContinuousSchedule(s1), sub, model.flow_variance)
            mus.append(mu)
            log_thetas.append(flow_logits_disc(marks_np[sl], ones, DiscreteSchedule(model.beta1), M, sub))
            off += int(n)
        diff = event_loss(model, h, tau, marks, concat_noise(parts), K)
        E = tau.shape[0]
        mu = torch.as_tensor(np.concatenate(mus))
        theta = torch.as_tensor(np.exp(np.concatenate(log_thetas)))
        out = model.psi(mu, theta, torch.ones(E, dtype=h.dtype), h)
        rec_mark = -out.log_p_O.gather(-1, marks.unsqueeze(-1)).squeeze(-1)
        r = tau - out.tau_hat
        rec_time = 0.5 * (LOG_2PI + 2.0 * math.log(s1)) + 0.5 * r * r / (s1 * s1)
        per_event.append(torch.stack([diff, rec_mark, rec_time], dim=1).numpy())
    d, rm, rt = np.concatenate(per_event).mean(axis=0)
    return VLBReport(float(d + rm + rt), float(d), float(rm), float(rt))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
