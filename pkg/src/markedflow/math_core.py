"""Numerical primitives shared across the package.

Everything here works on float64 numpy arrays. The only stateful object is
:class:`Rng`, a thin seeded wrapper around numpy's counter-based Philox
generator whose state can be serialized into checkpoints.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

PIVOT_TOL = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class NotPositiveDefinite(ValueError):
    pass


class Rng:
    """Seeded random stream (Philox, 64-bit seed).

    Identical seed and identical call sequence give an identical stream.
    Use :meth:`fork` to derive independent streams for parallel work.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.Philox(self.seed)
        self.gen = np.random.Generator(self._bitgen)

    def normal(self, size=None) -> np.ndarray | float:
        return self.gen.standard_normal(size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self.gen.uniform(low, high, size)

    def exponential(self, size=None):
        return self.gen.standard_exponential(size)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """Draw one index per row of ``probs`` (shape ``(..., M)``)."""
        probs = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(probs, axis=-1)
        u = self.gen.uniform(0.0, 1.0, probs.shape[:-1] + (1,)) * cdf[..., -1:]
        idx = (u > cdf).sum(axis=-1)
        return np.minimum(idx, probs.shape[-1] - 1)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def fork(self, stream_id: int) -> "Rng":
        # seed + stream-id, mixed so neighbouring seeds do not collide
        mixed = (self.seed * 0x9E3779B97F4A7C15 + int(stream_id) + 1) & 0xFFFFFFFFFFFFFFFF
        return Rng(mixed)

    def get_state(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        rng.set_state(state)
        return rng


def as_symmetric(a) -> np.ndarray:
    """Return a square float64 copy of ``a`` with the lower triangle mirrored up."""
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    lower = np.tril(a)
    return lower + np.tril(a, -1).T


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises :class:`NotPositiveDefinite` when any pivot is ``<= 1e-12``.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - np.dot(L[j, :j], L[j, :j])
        if not pivot > PIVOT_TOL:
            raise NotPositiveDefinite(f"pivot {j} is {pivot:.3e}; matrix is not positive definite")
        L[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def _check_dims(mean: np.ndarray, factor: np.ndarray) -> None:
    if factor.ndim != 2 or factor.shape[0] != factor.shape[1] or factor.shape[0] != mean.shape[-1]:
        raise ValueError(f"dimension mismatch: mean {mean.shape}, factor {factor.shape}")


def sample_mvn(rng: Rng, mean, factor, size: int | None = None) -> np.ndarray:
    """Draw ``mean + L z`` with ``z`` standard normal.

    With ``size`` given, returns ``size`` draws stacked along axis 0.
    """
    mean = np.asarray(mean, dtype=np.float64)
    factor = np.asarray(factor, dtype=np.float64)
    _check_dims(mean, factor)
    d = mean.shape[-1]
    if size is None:
        z = rng.normal(d)
        return mean + factor @ z
    z = rng.normal((size, d))
    return mean + z @ factor.T


def log_mvn_pdf(x, mean, factor) -> np.ndarray | float:
    """Multivariate normal log-density from the Cholesky factor of the covariance.

    ``x`` may carry leading batch dimensions.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    factor = np.asarray(factor, dtype=np.float64)
    _check_dims(mean, factor)
    if x.shape[-1] != mean.shape[-1]:
        raise ValueError(f"dimension mismatch: x {x.shape}, mean {mean.shape}")
    d = mean.shape[-1]
    diff = np.atleast_2d(x - mean)
    w = solve_triangular(factor, diff.T, lower=True)
    quad = np.sum(w * w, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(factor)))
    out = -0.5 * (d * LOG_2PI + logdet + quad)
    return float(out[0]) if x.ndim == 1 else out.reshape(x.shape[:-1])


def logsumexp(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    vmax = np.max(v, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    return np.squeeze(out, axis=axis)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v - np.expand_dims(logsumexp(v, axis=axis), axis)


def softmax(v, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(v, axis=axis))


def finite_diff_grad(f: Callable[[np.ndarray], float], p, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``p``."""
    p = np.array(p, dtype=np.float64)
    grad = np.zeros_like(p)
    flat = p.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(p)
        flat[i] = orig - h
        fm = f(p)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return grad
