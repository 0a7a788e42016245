"""Evaluation protocol: time-to-accident, mean TTA and average precision.

Frame indices are 0-based; the accident frame ``tau`` is the 1-based frame
number stored in :class:`~anticipate.dataset.ScenarioLabel`, so a first alarm
at index ``t_o`` leads the accident by ``(tau - t_o) / fps`` seconds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 21), 10).tolist())


@dataclass
class PredictionRecord:
    probs: np.ndarray   # frame-wise p_t
    positive: bool
    accident_frame: int
    fps: float

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise DomainError("probs must be a non-empty 1-d array")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise DomainError("probabilities must lie in [0, 1]")

    @property
    def score(self) -> float:
        return float(self.probs.max())


def first_crossing(probs, threshold: float) -> Optional[int]:
    hits = np.flatnonzero(np.asarray(probs) >= threshold)
    return int(hits[0]) if hits.size else None


def tta(record: PredictionRecord, threshold: float) -> Optional[float]:
    """Lead time in seconds of the first alarm, or None if none is raised."""
    if not record.positive or record.accident_frame < 1:
        raise DomainError("TTA is defined for positive videos only")
    t_o = first_crossing(record.probs, threshold)
    if t_o is None:
        return None
    return max(0.0, (record.accident_frame - t_o) / record.fps)


def mtta(records: Sequence[PredictionRecord], grid: Sequence[float] = DEFAULT_GRID) -> float:
    """TTA averaged over a threshold grid.

    At each threshold the positive videos are averaged with non-crossing
    videos counted as 0 s, so a model that never warns scores 0 there.
    """
    pos = [r for r in records if r.positive]
    if not pos:
        raise DomainError("mTTA needs at least one positive record")
    if len(grid) == 0:
        raise DomainError("empty threshold grid")
    per_threshold = []
    for a in grid:
        leads = [tta(r, a) for r in pos]
        per_threshold.append(sum(x or 0.0 for x in leads) / len(pos))
    return float(np.mean(per_threshold))


def _check_two_classes(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=bool)
    if y.ndim != 1 or y.all() or not y.any():
        raise DomainError("average precision needs at least one positive and one negative")
    return y


def precision_recall(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision/recall at every distinct score threshold, highest first.

    Tied scores form one operating point, so a tie group enters the curve as a
    block rather than in an arbitrary order.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return tp / (tp + fp), tp / y.sum(), s[ends]


def average_precision(scores, labels) -> float:
    """All-points area under the precision-recall step curve.

    Summed exactly in rationals, then rounded once.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_two_classes(labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    total = Fraction(0)
    prev = 0
    for k, end in enumerate(ends):
        t = int(tp[k])
        if t > prev:
            total += Fraction(t - prev) * Fraction(t, int(end) + 1)
        prev = t
    return float(total / int(y.sum()))


def alarm_stats(records: Sequence[PredictionRecord], threshold: float = 0.5) -> dict:
    """First-alarm timing on true positives and alarm frames on negatives."""
    first = []
    fp_frames = 0
    for r in records:
        if r.positive:
            t_o = first_crossing(r.probs, threshold)
            if t_o is not None:
                first.append(t_o / r.fps)
        else:
            fp_frames += int(np.sum(r.probs >= threshold))
    return {
        "threshold": threshold,
        "n_true_positive": len(first),
        "mean_first_alarm_s": float(np.mean(first)) if first else None,
        "false_positive_frames": fp_frames,
    }


@dataclass
class MetricsReport:
    ap: float
    mtta: float
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    grid: tuple
    tta_table: list          # per positive video, TTA (or None) at each grid threshold
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "AP": self.ap,
            "mTTA": self.mtta,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "thresholds": self.thresholds.tolist(),
            "grid": list(self.grid),
            "tta": self.tta_table,
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def report(records: Sequence[PredictionRecord], grid: Sequence[float] = DEFAULT_GRID,
           threshold: float = 0.5) -> MetricsReport:
    scores = [r.score for r in records]
    labels = [r.positive for r in records]
    prec, rec, thr = precision_recall(scores, labels)
    flagged = np.asarray(scores) >= threshold
    y = np.asarray(labels, dtype=bool)
    counts = {
        "videos": len(records),
        "positives": int(y.sum()),
        "true_positives": int(np.sum(flagged & y)),
        "false_positives": int(np.sum(flagged & ~y)),
        "threshold": threshold,
    }
    table = [[tta(r, a) for a in grid] for r in records if r.positive]
    return MetricsReport(
        ap=average_precision(scores, labels),
        mtta=mtta(records, grid),
        precision=prec,
        recall=rec,
        thresholds=thr,
        grid=tuple(grid),
        tta_table=table,
        counts=counts,
    )
