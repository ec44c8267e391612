"""The full model: history encoder, output network and cross-covariance."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .bfn_continuous import DEFAULT_SIGMA1
from .bfn_discrete import DEFAULT_BETA1
from .encoder import HistoryEncoder
from .event_data import NormStats
from .joint import constrain_c_torch
from .psi import T_MIN, X_MAX, X_MIN, PsiNetwork


class MarkedFlowModel(nn.Module):
    def __init__(
        self,
        num_marks: int,
        dim: int = 16,
        layers: int = 1,
        heads: int = 1,
        sigma1: float = DEFAULT_SIGMA1,
        beta1: float = DEFAULT_BETA1,
        joint_noise: bool = True,
        psi_blocks: int = 2,
        x_min: float = X_MIN,
        x_max: float = X_MAX,
        t_min: float = T_MIN,
        flow_variance: str = "standard",
    ):
        super().__init__()
        self.num_marks = num_marks
        self.dim = dim
        self.sigma1 = sigma1
        self.beta1 = beta1
        self.joint_noise = joint_noise
        self.flow_variance = flow_variance
        self.encoder = HistoryEncoder(num_marks, dim, layers, heads)
        self.psi = PsiNetwork(num_marks, dim, sigma1, psi_blocks, t_min, x_min, x_max)
        self.c_raw = nn.Parameter(torch.zeros(num_marks), requires_grad=joint_noise)
        self.norm: NormStats | None = None
        self.hparams = dict(
            num_marks=num_marks, dim=dim, layers=layers, heads=heads, sigma1=sigma1, beta1=beta1,
            joint_noise=joint_noise, psi_blocks=psi_blocks, x_min=x_min, x_max=x_max, t_min=t_min,
            flow_variance=flow_variance,
        )

    def cross_covariance(self) -> Tensor:
        if not self.joint_noise:
            return torch.zeros_like(self.c_raw)
        return constrain_c_torch(self.c_raw)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for name, p in self.named_parameters() if self.joint_noise or name != "c_raw"]


def build_model(seed: int, **hparams) -> MarkedFlowModel:
    """Construct a float64 model with initial weights drawn from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MarkedFlowModel(**hparams)
    return model.double()
