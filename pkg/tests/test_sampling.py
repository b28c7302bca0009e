import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvts.errors import ConfigError, SampleError, ValidationError
from tvts.sampling import (TranscriptTrack, masked_count, no_mask, sample_segments, sample_tube_mask,
                           segment_span, shuffle_permutation, tsn_frames, window_starts)


def test_masked_count_rounds_half_to_even():
    assert masked_count(16, 0.5) == 8
    assert masked_count(4, 0.625) == 2     # 2.5 -> 2
    assert masked_count(4, 0.875) == 4     # 3.5 -> 4
    assert masked_count(16, 0.7) == 11


def test_mask_is_a_tube():
    rng = np.random.default_rng(0)
    m = sample_tube_mask(16, 8, 0.5, rng)
    rows = [m.frame_mask(t) for t in range(8)]
    assert all(np.array_equal(rows[0], r) for r in rows)
    assert m.n_visible_tokens == 8 * 8


def test_mask_rejects_all_masked():
    with pytest.raises(ConfigError):
        sample_tube_mask(4, 2, 0.9, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_tube_mask(4, 2, 1.0, np.random.default_rng(0))


def test_mask_positions_are_uniform():
    rng = np.random.default_rng(1)
    counts = np.zeros(16)
    n = 4000
    for _ in range(n):
        counts[list(sample_tube_mask(16, 2, 0.25, rng).masked_positions)] += 1
    expected = n * 4 / 16
    assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))


def test_no_mask_keeps_everything():
    m = no_mask(16, 8)
    assert m.n_visible == 16 and m.n_visible_tokens == 128


def test_window_starts_formula():
    np.testing.assert_allclose(window_starts(2.5, 4, 3.0), [2.5, 6.5, 10.5, 14.5])
    assert segment_span(4, 5) == 23


def _track(times, duration):
    return TranscriptTrack([(f"w{i}", t) for i, t in enumerate(times)], duration)


def test_track_validation():
    with pytest.raises(ValidationError):
        _track([1.0, 0.5], 3.0)
    with pytest.raises(ValidationError):
        _track([4.0], 3.0)


def test_segments_closed_windows_and_gaps():
    track = _track([0.0, 2.0, 2.5, 3.0, 5.0], 5.0)
    segs = sample_segments(track, K=2, l=2.0, rng=None)
    # windows [0, 2] and [3, 5]; 2.5 falls in the gap
    assert segs.chronological == [["w0", "w1"], ["w3", "w4"]]
    assert segs.order == (1, 2)


def test_segments_too_short():
    with pytest.raises(SampleError):
        sample_segments(_track([0.5], 3.0), K=2, l=2.0, rng=None)


def test_shuffle_identity_and_uniform():
    assert list(shuffle_permutation(4, None)) == [0, 1, 2, 3]
    rng = np.random.default_rng(2)
    n = 24000
    counts = Counter(tuple(shuffle_permutation(4, rng)) for _ in range(n))
    assert set(counts) == set(itertools.permutations(range(4)))
    expected = n / 24
    assert max(abs(c - expected) for c in counts.values()) < 5 * np.sqrt(expected)


def test_order_is_rank_of_each_slot():
    track = _track(np.arange(0, 23, 0.5), 23.0)
    segs = sample_segments(track, 4, 5.0, np.random.default_rng(3))
    for slot, rank in enumerate(segs.order):
        assert segs.segments[slot] == segs.chronological[rank - 1]


@settings(max_examples=200, deadline=None)
@given(K=st.integers(1, 5), l=st.floats(0.5, 4.0), extra=st.floats(0.0, 5.0), seed=st.integers(0, 2**31))
def test_segment_property(K, l, extra, seed):
    rng = np.random.default_rng(seed)
    duration = segment_span(K, l) + extra
    times = np.sort(rng.uniform(0, duration, size=30))
    track = _track(times, duration)
    segs = sample_segments(track, K, l, rng)
    starts = segs.starts
    np.testing.assert_allclose(starts, segs.L_start + np.arange(K) * (l + 1))
    assert 0 <= segs.L_start <= extra + 1e-9
    assigned = [w for seg in segs.chronological for w in seg]
    assert len(assigned) == len(set(assigned))
    for k, seg in enumerate(segs.chronological):
        expect = [f"w{i}" for i, t in enumerate(times) if starts[k] <= t <= starts[k] + l]
        assert seg == expect


def test_tsn_midpoints_and_random_draws():
    plan = tsn_frames((0.0, 8.0), 4, None)
    np.testing.assert_allclose(plan.times, [1.0, 3.0, 5.0, 7.0])
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = tsn_frames((2.0, 10.0), 4, rng)
        e = p.edges
        assert np.all((p.times >= e[:-1]) & (p.times <= e[1:]))


def test_tsn_rejects_empty_interval():
    with pytest.raises(ConfigError):
        tsn_frames((1.0, 1.0), 4, None)
