"""Threshold-free detection metrics over scored samples.

The in-distribution class is the positive class everywhere: a detector is
judged by how its scores rank in-distribution samples above the rest. Ties are
handled deterministically (midranks for AUROC, grouped thresholds for AUPR and
TNR).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ScoredDataset:
    """Scores with binary labels; label True marks the positive class."""

    scores: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels, dtype=bool)
        if s.ndim != 1 or y.ndim != 1 or s.shape != y.shape:
            raise InvalidArgumentError("scores and labels must be equal-length 1-D")
        if not np.isfinite(s).all():
            raise InvalidArgumentError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int((~self.labels).sum())


def from_split(pos_scores, neg_scores, name: str = "") -> ScoredDataset:
    """Build a ScoredDataset from separate positive/negative score arrays."""
    p = np.asarray(pos_scores, dtype=np.float64).ravel()
    n = np.asarray(neg_scores, dtype=np.float64).ravel()
    scores = np.concatenate([p, n])
    labels = np.concatenate([np.ones(p.size, bool), np.zeros(n.size, bool)])
    return ScoredDataset(scores, labels, name)


@dataclass(frozen=True)
class MetricsReport:
    tnr_at_95_tpr: float
    auroc: float
    aupr: float
    n_pos: int
    n_neg: int

    def __post_init__(self):
        for f in (self.tnr_at_95_tpr, self.auroc, self.aupr):
            if not 0.0 <= f <= 1.0:
                raise InvalidArgumentError(f"metric {f!r} outside [0, 1]")


def _check_two_classes(data: ScoredDataset):
    if data.n_pos == 0 or data.n_neg == 0:
        raise InvalidArgumentError(
            f"need both classes, got {data.n_pos} positives and {data.n_neg} negatives"
        )


def auroc(data: ScoredDataset) -> float:
    """P(score_pos > score_neg) + P(tie)/2 via midranks; equals the trapezoid
    area under the ROC curve."""
    _check_two_classes(data)
    ranks = rankdata(data.scores, method="average")
    n_pos = data.n_pos
    n_neg = data.n_neg
    rank_sum = float(ranks[data.labels].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _descending_threshold_counts(data: ScoredDataset):
    """Distinct thresholds in descending order with cumulative TP/FP counts.

    Element i covers the rule "predict positive when score >= threshold[i]".
    """
    order = np.argsort(-data.scores, kind="stable")
    sorted_scores = data.scores[order]
    sorted_pos = data.labels[order].astype(np.int64)
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    last = np.concatenate([boundaries, [sorted_scores.size - 1]])
    tp = np.cumsum(sorted_pos)[last]
    fp = (last + 1) - tp
    return sorted_scores[last], tp, fp


def aupr(data: ScoredDataset) -> float:
    """Area under precision as a step function of recall, accumulated over
    distinct thresholds in descending order."""
    _check_two_classes(data)
    _, tp, fp = _descending_threshold_counts(data)
    n_pos = data.n_pos
    area = 0.0
    prev_recall = 0.0
    for tp_i, fp_i in zip(tp.tolist(), fp.tolist()):
        recall = tp_i / n_pos
        precision = tp_i / (tp_i + fp_i)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def tnr_at_tpr(data: ScoredDataset, tpr_target: float = 0.95) -> float:
    """Fraction of negatives below the largest threshold whose TPR still
    reaches ``tpr_target`` (scores >= threshold predict positive)."""
    _check_two_classes(data)
    if not 0.0 < tpr_target <= 1.0:
        raise InvalidArgumentError("tpr_target must lie in (0, 1]")
    pos = np.sort(data.scores[data.labels])[::-1]
    needed = int(np.ceil(tpr_target * pos.size))
    threshold = pos[needed - 1]
    neg = data.scores[~data.labels]
    return float((neg < threshold).sum()) / neg.size


def evaluate(data: ScoredDataset, tpr_target: float = 0.95) -> MetricsReport:
    """All three detection metrics over one scored dataset."""
    return MetricsReport(
        tnr_at_95_tpr=tnr_at_tpr(data, tpr_target),
        auroc=auroc(data),
        aupr=aupr(data),
        n_pos=data.n_pos,
        n_neg=data.n_neg,
    )
