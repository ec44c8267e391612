"""Synthetic marked data: multivariate exponential-kernel Hawkes process.

Events are generated by Ogata thinning. The optional ``coupling_scales``
make the mark of an event rescale the following interval: after an event
of mark ``k`` every candidate waiting time is multiplied by
``coupling_scales[k]`` on its way to the wall clock. Thinning and kernel
decay run on the unscaled (operational) clock, so the process stays
stationary whatever the scales are; a scale of 1.0 leaves it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .event_data import EventSequence, MarkedEvent
from .math_core import Rng


@dataclass
class HawkesSpec:
    base_rates: np.ndarray
    excitation: np.ndarray
    decay: float
    horizon: float
    coupling_scales: np.ndarray | None = None
    num_marks: int = field(init=False)

    def __post_init__(self):
        self.base_rates = np.asarray(self.base_rates, dtype=np.float64).reshape(-1)
        M = self.base_rates.size
        self.num_marks = M
        self.excitation = np.asarray(self.excitation, dtype=np.float64).reshape(M, M)
        if self.coupling_scales is None:
            self.coupling_scales = np.ones(M)
        self.coupling_scales = np.asarray(self.coupling_scales, dtype=np.float64).reshape(M)
        if np.any(self.base_rates <= 0):
            raise ValueError("base rates must be positive")
        if np.any(self.excitation < 0):
            raise ValueError("excitation must be nonnegative")
        if not self.decay > 0 or not self.horizon > 0:
            raise ValueError("decay and horizon must be positive")
        if np.any(self.coupling_scales <= 0):
            raise ValueError("coupling scales must be positive")
        radius = float(np.max(np.abs(np.linalg.eigvals(self.excitation / self.decay))))
        if radius >= 1.0:
            raise ValueError(f"spectral radius of excitation/decay is {radius:.3f}; process is not stationary")


def intensity_at(spec: HawkesSpec, history: EventSequence, t: float, mark: int) -> float:
    lam = spec.base_rates[mark]
    for ev in history.events:
        if ev.time < t:
            lam += spec.excitation[mark, ev.mark] * np.exp(-spec.decay * (t - ev.time))
    return float(lam)


def simulate(spec: HawkesSpec, rng: Rng) -> EventSequence:
    """One realisation on ``[0, horizon]`` by thinning."""
    M = spec.num_marks
    excited = np.zeros(M)  # excitation part of each intensity, operational clock
    t = 0.0
    scale = 1.0
    events: list[MarkedEvent] = []
    while True:
        bound = (spec.base_rates + excited).sum()
        w = rng.exponential() / bound
        t += w * scale
        if t > spec.horizon:
            break
        excited = excited * np.exp(-spec.decay * w)
        lam = spec.base_rates + excited
        if rng.uniform() * bound <= lam.sum():
            m = int(rng.categorical(lam / lam.sum()))
            events.append(MarkedEvent(t, m))
            excited = excited + spec.excitation[:, m]
            scale = spec.coupling_scales[m]
    return EventSequence(tuple(events))


def simulate_many(spec: HawkesSpec, n: int, rng: Rng, min_events: int = 2, max_tries: int = 100) -> list[EventSequence]:
    """``n`` sequences, each from its own forked stream, redrawing short ones."""
    out = []
    for i in range(n):
        sub = rng.fork(i)
        for _ in range(max_tries):
            seq = simulate(spec, sub)
            if len(seq) >= min_events:
                break
        else:
            raise RuntimeError(f"could not draw a sequence with >= {min_events} events in {max_tries} tries")
        out.append(seq)
    return out
