"""Joint sender/receiver over (interval, mark) with a learned cross-covariance.

The sender covariance is the ``(M+1) x (M+1)`` block matrix::

    [[1/alpha_c, c_eff^T      ],
     [c_eff,     alpha_d M I  ]]

``c`` is produced from an unconstrained vector by :func:`constrain_c`, which
guarantees ``c^T c < M``. When the two blocks use different accuracies the
cross block is ``c_eff = c * sqrt(alpha_d / alpha_c)``, so ``c / sqrt(M)`` is
the correlation between the interval noise and each mark coordinate and the
matrix stays positive definite for every accuracy pair. With a single
accuracy (``alpha_d == alpha_c``) ``c_eff`` is ``c`` itself.

Two implementations live here. The numpy functions build the dense matrix
and go through :func:`markedflow.math_core.cholesky`; they are the reference.
The torch functions exploit the block structure (mark block first, then the
interval conditioned on it) and are what training and sampling use.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .bfn_discrete import sender_mean
from .math_core import LOG_2PI, Rng, cholesky, log_mvn_pdf, logsumexp, sample_mvn


class ConstraintViolated(ValueError):
    pass


# -- reference (numpy) -----------------------------------------------------


# Largest c^T c / M the map can return. Without the cap 1 + |raw|^2 rounds to
# |raw|^2 once |raw| > 1e8 and the bound would be met with equality.
C_RATIO_MAX = 1.0 - 1e-9


def constrain_c(raw) -> np.ndarray:
    """``sqrt(M) raw / sqrt(1 + |raw|^2)``, so ``c^T c < M`` strictly."""
    raw = np.asarray(raw, dtype=np.float64)
    M = raw.shape[-1]
    norm2 = np.sum(raw * raw, axis=-1, keepdims=True)
    return math.sqrt(M) * raw / np.sqrt(np.maximum(1.0 + norm2, norm2 / C_RATIO_MAX))


def effective_cross_cov(c, alpha_c: float, alpha_d: float | None = None) -> np.ndarray:
    if alpha_d is None:
        return np.asarray(c, dtype=np.float64)
    return np.asarray(c, dtype=np.float64) * math.sqrt(alpha_d / alpha_c)


def check_constraint(c, M: int) -> None:
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (M,):
        raise ValueError(f"c must have shape ({M},), got {c.shape}")
    cc = float(c @ c)
    if not cc < M:
        raise ConstraintViolated(f"c^T c = {cc:.6g} must be < M = {M}")


def build_joint_cov(alpha: float, M: int, c, alpha_disc: float | None = None) -> np.ndarray:
    if not alpha > 0 or (alpha_disc is not None and not alpha_disc > 0):
        raise ValueError("accuracies must be positive")
    check_constraint(c, M)
    ad = alpha if alpha_disc is None else alpha_disc
    b = effective_cross_cov(c, alpha, alpha_disc)
    sigma = np.zeros((M + 1, M + 1))
    sigma[0, 0] = 1.0 / alpha
    sigma[0, 1:] = b
    sigma[1:, 0] = b
    sigma[1:, 1:] = ad * M * np.eye(M)
    return sigma


def joint_mean(tau: float, m: int, alpha_disc: float, M: int) -> np.ndarray:
    return np.concatenate([[tau], sender_mean(m, alpha_disc, M)])


def joint_sender_sample(tau: float, m: int, alpha: float, M: int, c, rng: Rng, alpha_disc: float | None = None):
    """One draw ``(y_tau, y_mark)`` from the joint sender (interval first ordering)."""
    sigma = build_joint_cov(alpha, M, c, alpha_disc)
    ad = alpha if alpha_disc is None else alpha_disc
    y = sample_mvn(rng, joint_mean(tau, m, ad, M), cholesky(sigma))
    return y[0], y[1:]


def joint_sender_logpdf(y, tau: float, m: int, alpha: float, M: int, c, alpha_disc: float | None = None) -> float:
    sigma = build_joint_cov(alpha, M, c, alpha_disc)
    ad = alpha if alpha_disc is None else alpha_disc
    return log_mvn_pdf(y, joint_mean(tau, m, ad, M), cholesky(sigma))


def joint_receiver_logpdf(y, tau_hat: float, p_O, alpha: float, M: int, c, alpha_disc: float | None = None) -> float:
    """Log of the mark mixture ``sum_m p_O(m) N(y | (tau_hat, alpha_d(M e_m - 1)), Sigma)``."""
    p_O = np.asarray(p_O, dtype=np.float64)
    if p_O.shape != (M,) or np.any(p_O < 0) or abs(p_O.sum() - 1.0) > 1e-9:
        raise ValueError("p_O must be a length-M probability vector")
    sigma = build_joint_cov(alpha, M, c, alpha_disc)
    L = cholesky(sigma)
    ad = alpha if alpha_disc is None else alpha_disc
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logw = np.log(p_O)
    comps = np.array([log_mvn_pdf(y, joint_mean(tau_hat, j, ad, M), L) for j in range(M)])
    return float(logsumexp(logw + comps))


# -- structured (torch) ----------------------------------------------------


def constrain_c_torch(raw: torch.Tensor) -> torch.Tensor:
    M = raw.shape[-1]
    norm2 = (raw * raw).sum(-1, keepdim=True)
    return math.sqrt(M) * raw / torch.sqrt(torch.maximum(1.0 + norm2, norm2 / C_RATIO_MAX))


class JointBlock:
    """Per-event block factorisation of the joint covariance.

    Holds, for a batch of events, the quantities that make sampling and
    log-density evaluation O(M) per component: the mark-block variance
    ``d = alpha_d M``, the effective cross-covariance ``b`` and the
    conditional variance ``s = 1/alpha_c - b^T b / d`` of the interval given
    the mark block.
    """

    def __init__(self, alpha_c: torch.Tensor, alpha_d: torch.Tensor, c: torch.Tensor, M: int):
        self.M = M
        self.alpha_c = alpha_c
        self.alpha_d = alpha_d
        self.d = alpha_d * M
        self.b = c.unsqueeze(0) * torch.sqrt(alpha_d / alpha_c).unsqueeze(-1)
        cc = (c * c).sum()
        if not bool(cc < M):
            raise ConstraintViolated(f"c^T c = {float(cc):.6g} must be < M = {M}")
        # 1/alpha_c - b.b/d, written to stay exact when c == 0
        self.s = (1.0 - cc / M) / alpha_c
        self._log_norm = -0.5 * (M * torch.log(2 * math.pi * self.d) + torch.log(2 * math.pi * self.s))

    def mark_mean(self, marks: torch.Tensor) -> torch.Tensor:
        onehot = torch.nn.functional.one_hot(marks, self.M).to(self.d.dtype)
        return self.alpha_d.unsqueeze(-1) * (self.M * onehot - 1.0)

    def sample(self, tau: torch.Tensor, marks: torch.Tensor, z_tau: torch.Tensor, z_mark: torch.Tensor):
        """Reparameterised draw; ``z_tau`` has shape (E,), ``z_mark`` (E, M)."""
        sd = torch.sqrt(self.d)
        v = self.mark_mean(marks) + sd.unsqueeze(-1) * z_mark
        u = tau + (self.b * z_mark).sum(-1) / sd + torch.sqrt(self.s) * z_tau
        return u, v

    def sender_logpdf_from_noise(self, z_tau: torch.Tensor, z_mark: torch.Tensor) -> torch.Tensor:
        return self._log_norm - 0.5 * ((z_mark * z_mark).sum(-1) + z_tau * z_tau)

    def component_logpdf(self, u: torch.Tensor, v: torch.Tensor, tau_hat: torch.Tensor) -> torch.Tensor:
        """``log N(y | (tau_hat, alpha_d(M e_j - 1)), Sigma)`` for every mark j; shape (E, M)."""
        M = self.M
        eye = torch.eye(M, dtype=v.dtype)
        means = self.alpha_d[:, None, None] * (M * eye - 1.0)  # (E, j, M)
        diff_v = v.unsqueeze(1) - means
        quad_v = (diff_v * diff_v).sum(-1) / self.d.unsqueeze(-1)
        cond = tau_hat.unsqueeze(-1) + (diff_v * self.b.unsqueeze(1)).sum(-1) / self.d.unsqueeze(-1)
        r = u.unsqueeze(-1) - cond
        quad_u = r * r / self.s.unsqueeze(-1)
        return self._log_norm.unsqueeze(-1) - 0.5 * (quad_v + quad_u)

    def receiver_logpdf(self, u, v, tau_hat, log_p_O) -> torch.Tensor:
        return torch.logsumexp(log_p_O + self.component_logpdf(u, v, tau_hat), dim=-1)


def kl_sample(
    tau: torch.Tensor,
    marks: torch.Tensor,
    tau_hat: torch.Tensor,
    log_p_O: torch.Tensor,
    alpha_c: torch.Tensor,
    alpha_d: torch.Tensor,
    c: torch.Tensor,
    z_tau: torch.Tensor,
    z_mark: torch.Tensor,
) -> torch.Tensor:
    """Single-draw estimate of ``KL(p_S || p_R)`` per event: ``ln p_S(y) - ln p_R(y)``."""
    blk = JointBlock(alpha_c, alpha_d, c, log_p_O.shape[-1])
    u, v = blk.sample(tau, marks, z_tau, z_mark)
    return blk.sender_logpdf_from_noise(z_tau, z_mark) - blk.receiver_logpdf(u, v, tau_hat, log_p_O)
