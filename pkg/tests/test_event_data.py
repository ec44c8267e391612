import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markedflow.event_data import (
    STD_FLOOR,
    BadFractions,
    Dataset,
    EmptyData,
    EventSequence,
    MarkedEvent,
    NonPositiveInterval,
    NormStats,
    ParseError,
    ValidationError,
    denormalize,
    encode_sequences,
    fit_norm,
    intervalize,
    load_dataset,
    normalize,
    split,
    write_dataset,
)
from markedflow.math_core import Rng


def seq(*pairs):
    return EventSequence.from_pairs(pairs)


def toy_dataset(n, M=3):
    return Dataset(tuple(seq((1.0 + i, i % M), (2.0 + i, (i + 1) % M)) for i in range(n)), M)


class TestLoad:
    def test_minimal_record(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"seq": [[0.5, 0], [1.2, 2]]}\n')
        d = load_dataset(p, 3)
        assert len(d) == 1
        assert len(d.sequences[0]) == 2
        assert d.sequences[0].events[1] == MarkedEvent(1.2, 2)

    def test_tied_times_rejected(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"seq": [[1.0, 0], [1.0, 1]]}\n')
        with pytest.raises(ValidationError):
            load_dataset(p, 2)

    def test_mark_out_of_range(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"seq": [[1.0, 0], [2.0, 3]]}\n')
        with pytest.raises(ValidationError):
            load_dataset(p, 3)

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"seq": [[1.0, 0], [2.0, 1]]\n')
        with pytest.raises(ParseError):
            load_dataset(p, 2)

    def test_count_matches_lines(self, tmp_path):
        p = tmp_path / "d.jsonl"
        lines = ['{"seq": [[0.1, 0], [0.4, 1]]}', '{"seq": [[1, 1], [2, 1], [3, 0]]}', '{"seq": [[2.5, 0], [7, 0]]}']
        p.write_text("\n".join(lines) + "\n")
        d = load_dataset(p, 2)
        assert len(d) == 3
        assert [len(s) for s in d.sequences] == [2, 3, 2]

    def test_write_then_load(self, tmp_path):
        d = toy_dataset(5)
        p = tmp_path / "d.jsonl"
        write_dataset(p, d.sequences)
        assert load_dataset(p, 3).sequences == d.sequences


class TestIntervals:
    def test_hand_difference(self):
        np.testing.assert_array_equal(intervalize(seq((1, 0), (3, 1), (6, 0))).intervals, [1, 2, 3])

    def test_single_event(self):
        np.testing.assert_array_equal(intervalize(EventSequence((MarkedEvent(5.0, 0),))).intervals, [5.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=50))
    def test_cumsum_inverse(self, gaps):
        times = np.cumsum(gaps)
        if np.any(np.diff(times) <= 0):
            return
        s = EventSequence.from_pairs(zip(times, [0] * len(times)))
        np.testing.assert_allclose(np.cumsum(intervalize(s).intervals), times, rtol=1e-12)


class TestNorm:
    def test_constant_intervals_floor(self):
        iv = intervalize(seq((math.e, 0), (2 * math.e, 0), (3 * math.e, 1)))
        ns = fit_norm([iv])
        assert ns.mean_log_tau == pytest.approx(1.0, abs=1e-12)
        assert ns.std_log_tau == STD_FLOOR

    def test_two_point(self):
        # intervals {1, e^2}: log values {0, 2}
        iv = intervalize(seq((1.0, 0), (1.0 + math.e**2, 1)))
        ns = fit_norm([iv])
        assert ns.mean_log_tau == pytest.approx(1.0, abs=1e-12)
        assert ns.std_log_tau == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyData):
            fit_norm([])

    def test_centered_point(self):
        assert normalize(1.0, NormStats(0.0, 1.0)) == 0.0

    def test_round_trip(self):
        ns = NormStats(0.7, 2.3)
        tau = np.exp(Rng(0).uniform(1000, math.log(1e-6), math.log(1e6)))
        back = denormalize(normalize(tau, ns), ns)
        assert np.max(np.abs(back - tau) / tau) < 1e-10

    def test_positivity(self):
        assert denormalize(-50.0, NormStats(0.0, 1.0)) > 0

    def test_non_positive(self):
        with pytest.raises(NonPositiveInterval):
            normalize(0.0, NormStats(0.0, 1.0))

    def test_train_stats_reused_on_test(self):
        d = toy_dataset(20)
        tr, _, te = split(d, (0.8, 0.1, 0.1), Rng(0))
        ns = fit_norm([intervalize(s) for s in tr.sequences])
        enc = encode_sequences(te.sequences, ns)
        expected = normalize(intervalize(te.sequences[0]).intervals, ns)
        np.testing.assert_array_equal(enc.tau_norm[0, : len(expected)], expected)


class TestSplit:
    def test_sizes(self):
        parts = split(toy_dataset(10), (0.8, 0.1, 0.1), Rng(0))
        assert [len(p) for p in parts] == [8, 1, 1]

    def test_deterministic(self):
        a = split(toy_dataset(30), (0.6, 0.2, 0.2), Rng(5))
        b = split(toy_dataset(30), (0.6, 0.2, 0.2), Rng(5))
        assert all(x.sequences == y.sequences for x, y in zip(a, b))

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(3, 60), seed=st.integers(0, 1000))
    def test_partition(self, n, seed):
        d = toy_dataset(n)
        parts = split(d, (0.5, 0.25, 0.25), Rng(seed))
        joined = [s for p in parts for s in p.sequences]
        assert len(joined) == n
        assert sorted(joined, key=lambda s: s.events[0].time) == list(d.sequences)

    @pytest.mark.parametrize("fr", [(0.5, 0.5, 0.0), (0.5, 0.3, 0.3), (0.9, 0.1)])
    def test_bad_fractions(self, fr):
        with pytest.raises(BadFractions):
            split(toy_dataset(10), fr, Rng(0))


class TestEncode:
    def test_padding_and_mask(self):
        seqs = [seq((1, 0), (2, 1)), seq((1, 1), (3, 0), (4, 1))]
        enc = encode_sequences(seqs, NormStats(0.0, 1.0))
        assert enc.tau_norm.shape == (2, 3)
        np.testing.assert_array_equal(enc.mask, [[True, True, False], [True, True, True]])
        np.testing.assert_array_equal(enc.marks[1], [1, 0, 1])
        np.testing.assert_allclose(enc.tau_norm[1], np.log([1, 2, 1]))
