"""Output-prediction network.

Maps the flow parameters ``(mu, theta)``, the flow time ``t`` and the
history embedding ``h`` to an interval estimate and a distribution over
marks. The interval head predicts the flow noise ``eps`` and the estimate
is recovered as ``mu / gamma - sqrt((1 - gamma) / gamma) * eps``, then
clipped to ``[x_min, x_max]``. Below ``t_min`` the estimate is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .encoder import sinusoid_features

T_MIN = 1e-6
X_MIN, X_MAX = -1.0, 1.0


@dataclass
class PredictionOutput:
    tau_hat: Tensor
    log_p_O: Tensor
    logits: Tensor
    raw_tau: Tensor

    @property
    def p_O(self) -> Tensor:
        return self.log_p_O.exp()


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.fc2(nn.functional.silu(self.fc1(x)))


class PsiNetwork(nn.Module):
    def __init__(
        self,
        num_marks: int,
        hist_dim: int,
        sigma1: float,
        blocks: int = 2,
        t_min: float = T_MIN,
        x_min: float = X_MIN,
        x_max: float = X_MAX,
    ):
        super().__init__()
        self.num_marks = num_marks
        self.time_dim = hist_dim
        self.sigma1 = sigma1
        self.t_min = t_min
        self.x_min = x_min
        self.x_max = x_max
        d_in = 1 + num_marks + self.time_dim + hist_dim
        self.d_in = d_in
        self.blocks = nn.Sequential(*[ResidualBlock(d_in) for _ in range(blocks)])
        self.eps_head = nn.Linear(d_in, 1)
        self.logit_head = nn.Linear(d_in, num_marks)

    def features(self, mu: Tensor, theta: Tensor, t: Tensor, h: Tensor) -> Tensor:
        return torch.cat([mu.unsqueeze(-1), 2.0 * theta - 1.0, sinusoid_features(t, self.time_dim), h], dim=-1)

    def forward(self, mu: Tensor, theta: Tensor, t: Tensor, h: Tensor) -> PredictionOutput:
        z = self.blocks(self.features(mu, theta, t, h))
        eps = self.eps_head(z).squeeze(-1)
        logits = self.logit_head(z)
        gamma = 1.0 - torch.pow(torch.as_tensor(self.sigma1, dtype=mu.dtype), 2.0 * t)
        early = t < self.t_min
        safe_gamma = torch.where(early, torch.ones_like(gamma), gamma)
        raw = mu / safe_gamma - torch.sqrt((1.0 - safe_gamma) / safe_gamma) * eps
        raw = torch.where(early, torch.zeros_like(raw), raw)
        tau_hat = torch.clamp(raw, self.x_min, self.x_max)
        return PredictionOutput(tau_hat, torch.log_softmax(logits, dim=-1), logits, raw)


def output_prediction(net: PsiNetwork, mu, theta, t, h) -> PredictionOutput:
    """Batched or single-event call; scalars and 1-D inputs are promoted."""
    dtype = next(net.parameters()).dtype
    mu = torch.as_tensor(mu, dtype=dtype)
    theta = torch.as_tensor(theta, dtype=dtype)
    t = torch.as_tensor(t, dtype=dtype)
    h = torch.as_tensor(h, dtype=dtype)
    single = theta.dim() == 1
    if single:
        mu, theta, t, h = mu.reshape(1), theta.unsqueeze(0), t.reshape(1), h.unsqueeze(0)
    else:
        t = t.expand(theta.shape[0]) if t.dim() == 0 else t
    out = net(mu, theta, t, h)
    if single:
        out = PredictionOutput(out.tau_hat[0], out.log_p_O[0], out.logits[0], out.raw_tau[0])
    return out


def backward(out: PredictionOutput, grad_tau_hat, grad_logits) -> None:
    """Push upstream gradients at the outputs into every parameter's ``.grad``."""
    if not (out.tau_hat.requires_grad or out.logits.requires_grad):
        raise RuntimeError("backward called without a recorded forward pass")
    tensors, grads = [], []
    for tensor, g in ((out.tau_hat, grad_tau_hat), (out.logits, grad_logits)):
        if tensor.requires_grad:
            tensors.append(tensor)
            grads.append(torch.as_tensor(g, dtype=tensor.dtype).expand_as(tensor))
    torch.autograd.backward(tensors, grads)
