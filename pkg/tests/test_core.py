import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import raster_oracle
from wstal.core import (AmbiguousGroundTruth, Segment, SequenceRecord, bag_label,
                        profile_durations, rasterize, runs, tiou, tiou_matrix)


def test_segment_validation():
    with pytest.raises(ValueError):
        Segment(1, 2.0, 2.0)
    with pytest.raises(ValueError):
        Segment(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Segment(1, 0.0, 1.0, score=1.5)
    with pytest.raises(ValueError):
        Segment(1, -0.5, 1.0)


def test_record_rejects_out_of_range_and_overlap():
    with pytest.raises(ValueError):
        SequenceRecord("a", "s", 10, 5.0, 3, 2, (Segment(1, 4.0, 6.0),))
    with pytest.raises(AmbiguousGroundTruth):
        SequenceRecord("a", "s", 10, 5.0, 3, 2, (Segment(1, 0.0, 2.0), Segment(2, 1.0, 3.0)))
    # same-class overlap is not ambiguous
    SequenceRecord("a", "s", 10, 5.0, 3, 2, (Segment(1, 0.0, 2.0), Segment(1, 1.0, 3.0)))


def test_rasterize_single_segment():
    labels = rasterize([Segment(1, 0.0, 1.0)], fps=10, duration=2.0)
    assert labels.tolist() == [1] * 10 + [0] * 10


def test_rasterize_empty():
    assert rasterize([], fps=10, duration=1.0).tolist() == [0] * 10


def test_rasterize_overlapping_predictions_highest_score_wins():
    segs = [Segment(1, 0.0, 1.0, 0.9), Segment(2, 0.5, 1.5, 0.4)]
    expected = raster_oracle(segs, 10, 2.0)
    assert expected == [1] * 10 + [2] * 5 + [0] * 5
    assert rasterize(segs, 10, 2.0).tolist() == expected


def test_rasterize_ambiguous_ground_truth():
    with pytest.raises(AmbiguousGroundTruth, match="ambiguous ground truth"):
        rasterize([Segment(1, 0.0, 1.0), Segment(2, 0.5, 1.5)], 10, 2.0)


def test_rasterize_half_open_boundaries():
    labels = rasterize([Segment(1, 0.5, 1.0), Segment(2, 1.0, 1.5)], 10, 2.0)
    assert labels[4] == 0 and labels[5] == 1 and labels[9] == 1 and labels[10] == 2 and labels[15] == 0


@given(st.lists(st.tuples(st.integers(1, 3), st.floats(0, 9), st.floats(0.05, 3),
                          st.floats(0, 1)), max_size=6),
       st.sampled_from([1.0, 7.0, 10.0, 25.0]))
def test_rasterize_matches_oracle(raw, fps):
    segs = [Segment(c, s, min(s + d, 10.0), round(sc, 2)) for c, s, d, sc in raw if min(s + d, 10.0) > s]
    assert rasterize(segs, fps, 10.0).tolist() == raster_oracle(segs, fps, 10.0)


@given(st.lists(st.tuples(st.integers(1, 3), st.floats(0, 20), st.floats(0.1, 5)), max_size=8),
       st.sampled_from([2.0, 10.0, 50.0]))
def test_rasterized_duration_matches_segment_duration(raw, fps):
    # build non-overlapping gt by laying segments end to end
    segs, t = [], 0.0
    for c, gap, d in raw:
        s = t + gap
        segs.append(Segment(c, s, s + d))
        t = s + d
    duration = t + 1.0
    labels = rasterize(segs, fps, duration)
    for c in {s.class_id for s in segs}:
        measured = np.count_nonzero(labels == c) / fps
        total = sum(s.duration for s in segs if s.class_id == c)
        n = sum(1 for s in segs if s.class_id == c)
        assert abs(measured - total) <= 2 * n / fps + 1e-9


def test_tiou_examples():
    assert tiou((0, 10), (0, 10)) == 1.0
    assert tiou((0, 5), (5, 10)) == 0.0
    assert tiou((0, 10), (5, 15)) == pytest.approx(5 / 15)


intervals = st.tuples(st.floats(-100, 100), st.floats(0.01, 50)).map(lambda t: (t[0], t[0] + t[1]))


@given(intervals, intervals, st.floats(0.1, 10))
def test_tiou_symmetric_and_scale_invariant(a, b, k):
    assert tiou(a, b) == tiou(b, a)
    assert tiou(a, a) == 1.0
    scaled = tiou((a[0] * k, a[1] * k), (b[0] * k, b[1] * k))
    assert scaled == pytest.approx(tiou(a, b), abs=1e-9)
    assert 0.0 <= tiou(a, b) <= 1.0


def test_tiou_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    a = np.sort(rng.uniform(0, 10, (7, 2)), axis=1)
    b = np.sort(rng.uniform(0, 10, (5, 2)), axis=1)
    m = tiou_matrix(a, b)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(tiou(tuple(a[i]), tuple(b[j])), abs=1e-12)


def _record(gt, C):
    return SequenceRecord("r", "s", 10, 100.0, 3, C, tuple(gt))


def test_bag_label_examples():
    assert bag_label(_record([Segment(1, 0, 1), Segment(3, 2, 3)], 4)).tolist() == [1, 0, 1, 0]
    assert bag_label(_record([], 3)).tolist() == [0, 0, 0]
    assert bag_label(_record([Segment(2, 0, 1), Segment(2, 5, 6)], 2)).tolist() == [0, 1]


@given(st.permutations([Segment(1, 0, 1), Segment(3, 2, 3), Segment(3, 4, 5)]), st.integers(1, 3))
def test_bag_label_order_and_duplication_invariant(segs, dup):
    base = bag_label(_record(segs, 4))
    assert bag_label(_record(list(segs) * dup, 4)).tolist() == base.tolist()


def test_profile_examples():
    p = profile_durations([2.0, 2.0, 2.0])
    assert (p.min, p.p5, p.median, p.p95, p.max) == (2.0, 2.0, 2.0, 2.0, 2.0)
    p = profile_durations([float(v) for v in range(1, 101)])
    assert p.min == 1 and p.max == 100
    assert p.p5 == pytest.approx(5.95) and p.median == pytest.approx(50.5) and p.p95 == pytest.approx(95.05)
    p = profile_durations([Segment(1, 0.0, 7.5)])
    assert p.as_dict() == dict.fromkeys(["min", "p5", "median", "p95", "max"], 7.5)
    with pytest.raises(ValueError):
        profile_durations([])


@given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=50))
def test_profile_ordering(durations):
    p = profile_durations(durations)
    assert p.min <= p.p5 <= p.median <= p.p95 <= p.max


def test_runs():
    assert runs(np.array([0, 1, 1, 0, 1], dtype=bool)) == [(1, 3), (4, 5)]
    assert runs(np.zeros(0, dtype=bool)) == []
