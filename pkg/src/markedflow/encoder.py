"""History encoder: per-event lifting followed by causal self-attention."""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn


def sinusoid_features(x: Tensor, dim: int) -> Tensor:
    """Interleaved ``[sin(w_k x), cos(w_k x)]`` with ``w_k = 1e4**(-k / n)``.

    At ``x = 0`` the features alternate 0, 1, 0, 1, ...
    """
    n = dim // 2
    k = torch.arange(n, dtype=x.dtype)
    freqs = torch.pow(torch.tensor(1e4, dtype=x.dtype), -k / max(n, 1))
    ang = x.unsqueeze(-1) * freqs
    out = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(-2)
    if dim % 2:
        out = torch.cat([out, torch.zeros_like(out[..., :1])], dim=-1)
    return out


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int = 1):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        B, N, D = x.shape
        hd = D // self.heads
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.view(B, N, self.heads, hd).transpose(1, 2)
        k = k.view(B, N, self.heads, hd).transpose(1, 2)
        v = v.view(B, N, self.heads, hd).transpose(1, 2)
        att = q @ k.transpose(-2, -1) / math.sqrt(hd)
        future = torch.triu(torch.ones(N, N, dtype=torch.bool), diagonal=1)
        att = att.masked_fill(future, float("-inf")).softmax(dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, N, D)
        return self.proj(out)


class EncoderBlock(nn.Module):
    """Post-norm attention block with a 4x feed-forward."""

    def __init__(self, dim: int, heads: int = 1):
        super().__init__()
        self.attn = CausalSelfAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff(x))


class HistoryEncoder(nn.Module):
    def __init__(self, num_marks: int, dim: int = 16, layers: int = 1, heads: int = 1):
        super().__init__()
        if dim < 2:
            raise ValueError("dim must be at least 2")
        self.num_marks = num_marks
        self.dim = dim
        self.time_dim = dim // 2
        self.mark_dim = dim - self.time_dim
        self.mark_embedding = nn.Embedding(num_marks, self.mark_dim)
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads) for _ in range(layers))
        self.h0 = nn.Parameter(torch.zeros(dim))

    def embed_event(self, tau_norm: Tensor, marks: Tensor) -> Tensor:
        if marks.numel() and (int(marks.min()) < 0 or int(marks.max()) >= self.num_marks):
            raise IndexError(f"mark outside [0, {self.num_marks})")
        return torch.cat([sinusoid_features(tau_norm, self.time_dim), self.mark_embedding(marks)], dim=-1)

    def forward(self, tau_norm: Tensor, marks: Tensor) -> Tensor:
        """History embeddings ``h_0..h_N`` for padded batches.

        ``tau_norm`` and ``marks`` have shape (B, N). Returns (B, N + 1, D)
        where slot ``i`` encodes events ``1..i`` only; padding must sit at the
        end of each row so the causal mask keeps it out of real positions.
        """
        B, N = marks.shape
        h0 = self.h0.expand(B, 1, self.dim)
        if N == 0:
            return h0
        x = self.embed_event(tau_norm, marks)
        for blk in self.blocks:
            x = blk(x)
        return torch.cat([h0, x], dim=1)

    def encode_history(self, events: list[tuple[float, int]]) -> list[Tensor]:
        """Unbatched convenience wrapper returning ``[h_0, ..., h_n]``."""
        dtype = self.h0.dtype
        tau = torch.tensor([[e[0] for e in events]], dtype=dtype).reshape(1, len(events))
        marks = torch.tensor([[e[1] for e in events]], dtype=torch.long).reshape(1, len(events))
        H = self.forward(tau, marks)[0]
        return list(H.unbind(0))
