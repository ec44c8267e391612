"""Self-describing binary checkpoint.

Layout (all integers little-endian)::

    magic   8 bytes  b"MFLOWCK\\0"
    version u32
    meta    u64 length + UTF-8 JSON (hparams, norm stats, config echo, RNG state)
    count   u32
    count x tensor: u16 name length, name, u8 ndim, ndim x u64 dims, float64 '<f8' data

Float64 data is written verbatim so that a round trip is bit-exact.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .event_data import NormStats
from .model import MarkedFlowModel

MAGIC = b"MFLOWCK\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: MarkedFlowModel
    config: dict = field(default_factory=dict)
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    if model.norm is None:
        raise CheckpointError("model has no normalisation statistics")
    meta = {
        "hparams": model.hparams,
        "norm": {"mean_log_tau": model.norm.mean_log_tau, "std_log_tau": model.norm.std_log_tau},
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    state = model.state_dict()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(meta_raw)))
    buf.write(meta_raw)
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        if tensor.dtype != torch.float64:
            raise CheckpointError(f"tensor {name} is {tensor.dtype}, expected float64")
        _write_tensor(buf, name, tensor.detach().cpu().numpy())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<Q")
    meta = json.loads(r.take(meta_len).decode())
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float64))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    model = MarkedFlowModel(**meta["hparams"]).double()
    model.load_state_dict(state)
    model.norm = NormStats(**meta["norm"])
    return Checkpoint(model, meta["config"], meta["rng_state"], meta["extra"])


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
