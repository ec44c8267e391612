"""Marked event records, dataset ingestion, interval handling and splits.

Dataset files are newline-delimited JSON, one sequence per line::

    {"seq": [[0.5, 0], [1.2, 2]]}

Each pair is ``[time, mark]`` with 0-based integer marks. The number of
marks ``M`` is supplied by the caller; loading fails if any mark is ``>= M``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .math_core import Rng

STD_FLOOR = 1e-8


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class EmptyData(ValueError):
    pass


class NonPositiveInterval(ValueError):
    pass


class BadFractions(ValueError):
    pass


@dataclass(frozen=True)
class MarkedEvent:
    time: float
    mark: int


@dataclass(frozen=True)
class EventSequence:
    events: tuple[MarkedEvent, ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "EventSequence":
        return cls(tuple(MarkedEvent(float(t), int(m)) for t, m in pairs))

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=np.float64)

    @property
    def marks(self) -> np.ndarray:
        return np.array([e.mark for e in self.events], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.events)

    def to_pairs(self) -> list[list]:
        return [[e.time, e.mark] for e in self.events]


@dataclass(frozen=True)
class IntervalizedSequence:
    intervals: np.ndarray
    marks: np.ndarray

    def __len__(self) -> int:
        return len(self.marks)


@dataclass(frozen=True)
class NormStats:
    mean_log_tau: float
    std_log_tau: float


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[EventSequence, ...]
    num_marks: int
    split: str = "all"

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def num_events(self) -> int:
        return sum(len(s) for s in self.sequences)


def validate_sequence(seq: EventSequence, num_marks: int, min_length: int = 2) -> None:
    if len(seq) < min_length:
        raise ValidationError(f"sequence has {len(seq)} events, need at least {min_length}")
    prev = -math.inf
    for i, ev in enumerate(seq.events):
        if not math.isfinite(ev.time) or ev.time < 0:
            raise ValidationError(f"event {i}: time {ev.time} must be finite and nonnegative")
        if ev.time <= prev:
            raise ValidationError(f"event {i}: time {ev.time} does not strictly follow {prev}")
        if not 0 <= ev.mark < num_marks:
            raise ValidationError(f"event {i}: mark {ev.mark} outside [0, {num_marks})")
        prev = ev.time
    if seq.events[0].time <= 0:
        # first interval is measured from the origin, so it must be positive too
        raise ValidationError("first event time must be > 0")


def parse_line(line: str, lineno: int = 0) -> EventSequence:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {lineno}: {exc.msg}") from exc
    if not isinstance(record, dict) or set(record) != {"seq"}:
        raise ParseError(f"line {lineno}: expected an object with the single field 'seq'")
    pairs = record["seq"]
    if not isinstance(pairs, list):
        raise ParseError(f"line {lineno}: 'seq' must be an array")
    out = []
    for j, pair in enumerate(pairs):
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ParseError(f"line {lineno}: entry {j} is not a [time, mark] pair")
        t, m = pair
        if isinstance(t, bool) or not isinstance(t, (int, float)):
            raise ParseError(f"line {lineno}: entry {j} time is not a number")
        if isinstance(m, bool) or not isinstance(m, int) or m < 0:
            raise ParseError(f"line {lineno}: entry {j} mark is not a nonnegative integer")
        out.append(MarkedEvent(float(t), m))
    return EventSequence(tuple(out))


def load_dataset(path: str | Path, num_marks: int) -> Dataset:
    if num_marks < 1:
        raise ValueError("num_marks must be positive")
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            seq = parse_line(line, lineno)
            try:
                validate_sequence(seq, num_marks)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            seqs.append(seq)
    return Dataset(tuple(seqs), num_marks)


def write_dataset(path: str | Path, sequences: Iterable[EventSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            fh.write(json.dumps({"seq": seq.to_pairs()}) + "\n")


def sequence_key(seq: EventSequence) -> int:
    """Stable 63-bit content hash, used to key per-sequence random streams."""
    raw = np.array([[e.time, e.mark] for e in seq.events], dtype="<f8").tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little") >> 1


def intervalize(seq: EventSequence) -> IntervalizedSequence:
    times = seq.times
    intervals = np.diff(times, prepend=0.0)
    return IntervalizedSequence(intervals, seq.marks)


def fit_norm(train: Sequence[IntervalizedSequence]) -> NormStats:
    if not train:
        raise EmptyData("no training sequences")
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.concatenate([np.log(s.intervals) for s in train])
    if logs.size == 0:
        raise EmptyData("no intervals in training data")
    if not np.all(np.isfinite(logs)):
        raise NonPositiveInterval("training intervals must be > 0")
    return NormStats(float(logs.mean()), max(float(logs.std()), STD_FLOOR))


def normalize(tau, stats: NormStats):
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise NonPositiveInterval("intervals must be > 0 before normalization")
    z = (np.log(tau) - stats.mean_log_tau) / stats.std_log_tau
    return float(z) if z.ndim == 0 else z


def denormalize(z, stats: NormStats):
    z = np.asarray(z, dtype=np.float64)
    tau = np.exp(stats.mean_log_tau + z * stats.std_log_tau)
    return float(tau) if tau.ndim == 0 else tau


def split(d: Dataset, fractions: tuple[float, float, float], rng: Rng) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle-and-cut partition into train/val/test.

    Sizes are ``round(n * f)`` for train and val; test takes the remainder.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(d)
    order = rng.permutation(n)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_val = min(n_val, n - n_train)
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    names = ("train", "val", "test")
    return tuple(
        Dataset(tuple(d.sequences[i] for i in sorted(idx)), d.num_marks, name) for idx, name in zip(parts, names)
    )


@dataclass
class EncodedBatch:
    """Padded normalized intervals and marks for a group of sequences."""

    tau_norm: np.ndarray  # (B, N)
    marks: np.ndarray  # (B, N)
    mask: np.ndarray  # (B, N) bool, True where an event exists
    lengths: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def encode_sequences(seqs: Sequence[EventSequence], stats: NormStats) -> EncodedBatch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    n = int(lengths.max()) if len(seqs) else 0
    tau = np.zeros((len(seqs), n))
    marks = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for b, s in enumerate(seqs):
        iv = intervalize(s)
        tau[b, : len(s)] = normalize(iv.intervals, stats)
        marks[b, : len(s)] = iv.marks
        mask[b, : len(s)] = True
    return EncodedBatch(tau, marks, mask, lengths)
