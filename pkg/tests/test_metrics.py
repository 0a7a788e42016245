from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anticipate import metrics as M
from anticipate.errors import DomainError


def brute_force_ap(scores, labels):
    """Enumerate every threshold at a distinct score; sum recall steps times precision."""
    n_pos = sum(labels)
    total = Fraction(0)
    prev_recall = Fraction(0)
    for thr in sorted(set(scores), reverse=True):
        picked = [l for s, l in zip(scores, labels) if s >= thr]
        tp = sum(picked)
        recall = Fraction(tp, n_pos)
        precision = Fraction(tp, len(picked))
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return float(total)


def rec(probs, tau=0, fps=20.0):
    return M.PredictionRecord(np.asarray(probs, float), tau > 0, tau, fps)


def test_ap_hand_case():
    assert M.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == 5 / 6


def test_ap_perfect_ranking():
    assert M.average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_ap_all_tied_is_prevalence():
    rng = np.random.default_rng(0)
    labels = rng.permutation([1] * 3 + [0] * 7)
    assert M.average_precision([0.5] * 10, labels) == pytest.approx(0.3, abs=1e-15)


def test_ap_single_class_rejected():
    with pytest.raises(DomainError):
        M.average_precision([0.1, 0.2], [1, 1])
    with pytest.raises(DomainError):
        M.average_precision([0.1, 0.2], [0, 0])


def test_ap_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        labels = list(rng.permutation([1] + [0] + list(rng.integers(0, 2, n - 2))))
        # coarse grid so ties are common
        scores = list(rng.integers(0, 5, n) / 4.0)
        assert M.average_precision(scores, labels) == brute_force_ap(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=12))
def test_ap_oracle_property(pairs):
    scores = [s for s, _ in pairs]
    labels = [int(l) for _, l in pairs]
    if len(set(labels)) < 2:
        return
    ap = M.average_precision(scores, labels)
    assert ap == brute_force_ap(scores, labels)
    assert 0.0 <= ap <= 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=2, max_size=12))
def test_ap_invariant_under_monotone_transform(pairs):
    # integer scores keep the transform strictly monotone in floating point
    scores = np.array([s for s, _ in pairs], dtype=float)
    labels = [int(l) for _, l in pairs]
    if len(set(labels)) < 2:
        return
    assert M.average_precision(scores ** 3 + 5 * scores, labels) == M.average_precision(scores, labels)


def test_precision_recall_shapes():
    p, r, thr = M.precision_recall([0.9, 0.8, 0.8, 0.1], [1, 0, 1, 0])
    assert list(thr) == [0.9, 0.8, 0.1]
    assert list(r) == [0.5, 1.0, 1.0]
    assert p[1] == pytest.approx(2 / 3)


# ---------------------------------------------------------------- TTA

def test_tta_hand_case():
    p = np.zeros(100)
    p[40:] = 0.9
    assert M.tta(rec(p, tau=80), 0.5) == 2.0


def test_tta_late_and_missing():
    p = np.zeros(100)
    p[90:] = 0.9
    assert M.tta(rec(p, tau=80), 0.5) == 0.0
    assert M.tta(rec(np.full(10, 0.99), tau=5), 1.0) is None


def test_tta_negative_video_rejected():
    with pytest.raises(DomainError):
        M.tta(rec([0.1, 0.9]), 0.5)


def test_tta_non_increasing_in_threshold_random_traces():
    rng = np.random.default_rng(7)
    grid = np.linspace(0, 1, 41)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        r = rec(rng.random(n), tau=int(rng.integers(1, n + 1)), fps=10.0)
        vals = [M.tta(r, a) for a in grid]
        nums = [0.0 if v is None else v for v in vals]
        assert all(a >= b for a, b in zip(nums, nums[1:]))
        # once no frame crosses, no higher threshold crosses either
        first_none = next((i for i, v in enumerate(vals) if v is None), len(vals))
        assert all(v is None for v in vals[first_none:])


def test_mtta_single_point_grid_is_mean_tta():
    rng = np.random.default_rng(3)
    recs = [rec(rng.random(30), tau=int(rng.integers(1, 31)), fps=10.0) for _ in range(8)]
    recs.append(rec(rng.random(30) * 0.4))  # negatives are ignored
    expected = np.mean([M.tta(r, 0.5) or 0.0 for r in recs if r.positive])
    assert M.mtta(recs, [0.5]) == pytest.approx(expected, abs=1e-12)


def test_mtta_constant_trace():
    r = rec(np.ones(50), tau=50, fps=10.0)
    assert M.tta(r, 0.3) == 5.0
    # every grid threshold crosses at frame 0, including 1.0
    assert M.mtta([r]) == pytest.approx(5.0)


def test_mtta_counts_non_crossing_as_zero():
    r = rec(np.full(20, 0.55), tau=20, fps=10.0)
    grid = [0.5, 0.6]
    assert M.mtta([r], grid) == pytest.approx((2.0 + 0.0) / 2)


def test_mtta_bounded_by_lowest_threshold_tta():
    rng = np.random.default_rng(5)
    recs = [rec(rng.random(40), tau=int(rng.integers(1, 41)), fps=20.0) for _ in range(10)]
    lowest = np.mean([M.tta(r, 0.0) for r in recs])
    assert M.mtta(recs) <= lowest + 1e-12


def test_mtta_requires_positive():
    with pytest.raises(DomainError):
        M.mtta([rec([0.1, 0.2])])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 30), extra=st.integers(1, 20), seed=st.integers(0, 10_000))
def test_mtta_invariant_to_frames_after_accident(n, extra, seed):
    rng = np.random.default_rng(seed)
    tau = int(rng.integers(1, n + 1))
    base = rng.random(n)
    # frames from index tau on cannot give a positive lead, and frames
    # appended after the end cannot move an earlier crossing
    longer = np.concatenate([base, rng.random(extra)])
    a = M.mtta([rec(base, tau=tau, fps=10.0)])
    b = M.mtta([rec(longer, tau=tau, fps=10.0)])
    assert a == pytest.approx(b, abs=1e-12)


def test_report_and_alarm_stats():
    recs = [rec([0.1, 0.6, 0.7], tau=3, fps=1.0), rec([0.2, 0.3, 0.6]), rec([0.1, 0.1, 0.1])]
    rep = M.report(recs)
    assert rep.ap == 1.0
    assert rep.counts["true_positives"] == 1 and rep.counts["false_positives"] == 1
    al = M.alarm_stats(recs)
    assert al["mean_first_alarm_s"] == 1.0 and al["false_positive_frames"] == 1
    d = rep.to_dict()
    assert set(d) >= {"AP", "mTTA", "precision", "recall", "tta"}
