import numpy as np
import pytest

from lsgm.errors import InvalidArgumentError
from lsgm.metrics import (
    MetricsReport,
    ScoredDataset,
    aupr,
    auroc,
    evaluate,
    from_split,
    tnr_at_tpr,
)


def brute_auroc(data: ScoredDataset) -> float:
    """O(n^2) pair counting."""
    pos = data.scores[data.labels]
    neg = data.scores[~data.labels]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (pos.size * neg.size)


def brute_aupr(data: ScoredDataset) -> float:
    """Exhaustive threshold sweep, recounting TP/FP at every threshold."""
    pos = data.scores[data.labels]
    neg = data.scores[~data.labels]
    thresholds = sorted(set(data.scores.tolist()), reverse=True)
    area = 0.0
    prev_recall = 0.0
    for t in thresholds:
        tp = int((pos >= t).sum())
        fp = int((neg >= t).sum())
        recall = tp / pos.size
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def brute_tnr(data: ScoredDataset, target: float) -> float:
    """Exhaustive threshold enumeration for the largest TPR-feasible threshold."""
    pos = data.scores[data.labels]
    neg = data.scores[~data.labels]
    feasible = [t for t in set(data.scores.tolist()) if (pos >= t).mean() >= target]
    t = max(feasible)
    return float((neg < t).mean())


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc(from_split([2.0, 3.0], [0.0, 1.0])) == 1.0

    def test_symmetric_ties(self):
        assert auroc(from_split([0.0, 1.0], [0.0, 1.0])) == 0.5

    def test_hand_counted_pairs(self):
        # Pairs: 3>2, 3>0, 1<2, 1>0 -> 3 of 4.
        assert auroc(from_split([3.0, 1.0], [2.0, 0.0])) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(InvalidArgumentError):
            auroc(from_split([1.0], []))

    def test_label_swap_with_negated_scores(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=40)
        y = rng.random(40) < 0.5
        y[:2] = [True, False]
        a = auroc(ScoredDataset(s, y))
        b = auroc(ScoredDataset(-s, ~y))
        assert a == pytest.approx(b, abs=1e-12)

    def test_random_exchangeable_near_half(self):
        rng = np.random.default_rng(7)
        a = auroc(from_split(rng.normal(size=10_000), rng.normal(size=10_000)))
        assert 0.48 <= a <= 0.52


class TestAupr:
    def test_perfect_separation(self):
        assert aupr(from_split([2.0, 3.0], [0.0, 1.0])) == 1.0

    def test_all_identical_scores_balanced(self):
        assert aupr(from_split([1.0] * 5, [1.0] * 5)) == 0.5

    def test_hand_case_matches_sweep(self):
        data = from_split([3.0, 1.0], [2.0, 0.0])
        # Thresholds 3, 2, 1, 0: precision 1, 1/2, 2/3, 1/2 at recall 1/2,
        # 1/2, 1, 1 -> area = 0.5*1 + 0*0.5 + 0.5*(2/3) + 0 = 5/6.
        assert aupr(data) == pytest.approx(5.0 / 6.0, abs=1e-15)
        assert aupr(data) == brute_aupr(data)


class TestTnrAtTpr:
    def test_perfect_separation(self):
        for target in (0.5, 0.9, 0.95, 1.0):
            assert tnr_at_tpr(from_split([2.0, 3.0], [0.0, 1.0]), target) == 1.0

    def test_identical_multisets_interleaved_ties(self):
        vals = list(np.linspace(0.0, 1.0, 20))
        data = from_split(vals, vals)
        assert tnr_at_tpr(data, 0.95) == brute_tnr(data, 0.95)
        # 19 of 20 positives must clear the threshold, so the threshold is the
        # second-lowest value and exactly one negative sits below it.
        assert tnr_at_tpr(data, 0.95) == 0.05

    def test_point_masses(self):
        data = from_split([1.0] * 100, [0.0] * 100)
        assert tnr_at_tpr(data, 0.95) == 1.0

    def test_bad_target_rejected(self):
        data = from_split([1.0], [0.0])
        with pytest.raises(InvalidArgumentError):
            tnr_at_tpr(data, 0.0)
        with pytest.raises(InvalidArgumentError):
            tnr_at_tpr(data, 1.5)


class TestMonotoneTransformInvariance:
    def test_all_metrics_invariant(self):
        rng = np.random.default_rng(3)
        data = from_split(rng.normal(size=60) + 0.5, rng.normal(size=40))
        transforms = [
            lambda s: 3.0 * s + 7.0,
            np.tanh,
            lambda s: np.exp(s / 4.0),
        ]
        base = (auroc(data), aupr(data), tnr_at_tpr(data))
        for f in transforms:
            t = ScoredDataset(f(data.scores), data.labels)
            got = (auroc(t), aupr(t), tnr_at_tpr(t))
            assert got == pytest.approx(base, abs=1e-12)


class TestOracleEquivalence:
    def test_exhaustive_small_datasets(self):
        rng = np.random.default_rng(11)
        for case in range(60):
            n_pos = int(rng.integers(1, 51))
            n_neg = int(rng.integers(1, 51))
            if case % 3 == 0:
                # Heavy ties: integer-valued scores.
                pos = rng.integers(0, 6, size=n_pos).astype(float)
                neg = rng.integers(0, 6, size=n_neg).astype(float)
            else:
                pos = rng.normal(size=n_pos) + 0.3
                neg = rng.normal(size=n_neg)
            data = from_split(pos, neg)
            assert auroc(data) == brute_auroc(data)
            assert aupr(data) == brute_aupr(data)
            assert tnr_at_tpr(data, 0.95) == brute_tnr(data, 0.95)


class TestEvaluate:
    def test_report_fields(self):
        data = from_split([2.0, 3.0, 4.0], [0.0, 1.0])
        report = evaluate(data)
        assert report.n_pos == 3
        assert report.n_neg == 2
        assert report.auroc == 1.0
        assert report.aupr == 1.0
        assert report.tnr_at_95_tpr == 1.0

    def test_report_range_validation(self):
        with pytest.raises(InvalidArgumentError):
            MetricsReport(1.2, 0.5, 0.5, 1, 1)

    def test_non_finite_scores_rejected(self):
        with pytest.raises(InvalidArgumentError):
            from_split([np.inf], [0.0])
