"""Metric worked examples plus brute-force oracle agreement on random data."""

import warnings

import numpy as np
import pytest

from svfap.metrics import acc_personality, ccc, pcc, uar, war, weighted_f1


def oracle_war(preds, labels):
    return sum(int(p == l) for p, l in zip(preds, labels)) / len(labels)


def oracle_uar(preds, labels, k):
    recalls = []
    for c in range(k):
        hits = sum(1 for p, l in zip(preds, labels) if l == c and p == c)
        total = sum(1 for l in labels if l == c)
        if total:
            recalls.append(hits / total)
    return sum(recalls) / len(recalls)


def oracle_weighted_f1(preds, labels, k):
    total = 0.0
    for c in range(k):
        tp = sum(1 for p, l in zip(preds, labels) if p == c and l == c)
        fp = sum(1 for p, l in zip(preds, labels) if p == c and l != c)
        fn = sum(1 for p, l in zip(preds, labels) if p != c and l == c)
        support = tp + fn
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom else 0.0
        total += support * f1
    return total / len(labels)


def oracle_pcc(pred, target):
    n = len(pred)
    mp, mt = sum(pred) / n, sum(target) / n
    cov = sum((p - mp) * (t - mt) for p, t in zip(pred, target)) / n
    vp = sum((p - mp) ** 2 for p in pred) / n
    vt = sum((t - mt) ** 2 for t in target) / n
    return cov / (vp ** 0.5 * vt ** 0.5)


def oracle_ccc(pred, target):
    n = len(pred)
    mp, mt = sum(pred) / n, sum(target) / n
    cov = sum((p - mp) * (t - mt) for p, t in zip(pred, target)) / n
    vp = sum((p - mp) ** 2 for p in pred) / n
    vt = sum((t - mt) ** 2 for t in target) / n
    return 2 * cov / (vp + vt + (mp - mt) ** 2)


class TestWorkedExamples:
    def test_war(self):
        assert war([0, 0, 1, 1], [0, 0, 0, 1]) == 0.75
        assert war([1, 2], [1, 2]) == 1.0
        assert war([1, 1], [0, 0]) == 0.0

    def test_uar(self):
        got = uar([0, 0, 1, 1], [0, 0, 0, 1], 2)
        assert got == pytest.approx((2 / 3 + 1) / 2)
        assert got == pytest.approx(0.833333, abs=1e-6)

    def test_uar_majority_predictor(self):
        labels = [0] * 9 + [1]
        preds = [0] * 10
        assert uar(preds, labels, 2) == pytest.approx(0.5)

    def test_uar_excludes_absent_classes_with_warning(self):
        with pytest.warns(UserWarning, match="excluded"):
            got = uar([0, 1], [0, 1], 3)
        assert got == 1.0

    def test_weighted_f1(self):
        got = weighted_f1([0, 1, 1], [0, 0, 1], 2)
        assert got == pytest.approx(2 / 3)
        assert got == pytest.approx(0.666667, abs=1e-6)

    def test_weighted_f1_perfect(self):
        assert weighted_f1([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_weighted_f1_single_class(self):
        assert weighted_f1([0, 0], [0, 0], 1) == 1.0

    def test_pcc(self):
        assert pcc([1, 2, 4], [1, 2, 3]) == pytest.approx(0.981981, abs=1e-5)
        assert pcc([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert pcc([-1, -2, -3], [1, 2, 3]) == pytest.approx(-1.0)

    def test_pcc_exact_value(self):
        # sqrt(27/28) in closed form
        assert pcc([1, 2, 4], [1, 2, 3]) == pytest.approx((27 / 28) ** 0.5,
                                                          abs=1e-12)

    def test_pcc_zero_variance(self):
        with pytest.raises(ValueError, match="zero-variance"):
            pcc([1, 1, 1], [1, 2, 3])

    def test_ccc(self):
        assert ccc([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert ccc([2, 2, 2], [1, 2, 3]) == pytest.approx(0.0)

    def test_ccc_degenerate(self):
        with pytest.raises(ValueError, match="constant"):
            ccc([1, 1], [1, 1])

    def test_acc_personality(self):
        assert acc_personality([0.5, 0.5], [0.5, 0.5]) == 1.0
        assert acc_personality([1.0, 0.0], [0.0, 1.0]) == 0.0
        assert acc_personality([0.6], [0.5]) == pytest.approx(0.9)


class TestValidation:
    def test_empty_inputs(self):
        for fn in (lambda: war([], []), lambda: uar([], [], 2),
                   lambda: weighted_f1([], [], 2), lambda: pcc([], []),
                   lambda: ccc([], []), lambda: acc_personality([], [])):
            with pytest.raises(ValueError):
                fn()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            war([0, 1], [0])
        with pytest.raises(ValueError):
            acc_personality([0.5], [0.5, 0.6])

    def test_out_of_range_classes(self):
        with pytest.raises(ValueError):
            uar([0, 5], [0, 1], 2)


class TestProperties:
    def test_war_equals_uar_on_balanced_labels(self):
        rng = np.random.default_rng(0)
        labels = np.repeat(np.arange(4), 25)
        # per-class permutation keeps per-class counts balanced
        preds = rng.integers(0, 4, size=100)
        recalls = [np.mean(preds[labels == c] == c) for c in range(4)]
        assert uar(preds, labels, 4) == pytest.approx(float(np.mean(recalls)))
        assert war(preds, labels) == pytest.approx(float(np.mean(recalls)))

    def test_ccc_bounded_by_pcc(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            pred = rng.normal(size=20)
            target = rng.normal(size=20)
            assert abs(ccc(pred, target)) <= abs(pcc(pred, target)) + 1e-12


class TestBruteForceOracles:
    def test_thousand_random_instances(self):
        rng = np.random.default_rng(42)
        for trial in range(1000):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(2, 40))
            labels = rng.integers(0, k, size=n)
            preds = rng.integers(0, k, size=n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert war(preds, labels) == pytest.approx(
                    oracle_war(preds, labels), abs=1e-9)
                assert uar(preds, labels, k) == pytest.approx(
                    oracle_uar(preds, labels, k), abs=1e-9)
                assert weighted_f1(preds, labels, k) == pytest.approx(
                    oracle_weighted_f1(preds, labels, k), abs=1e-9)
            pred = rng.normal(size=n)
            target = rng.normal(size=n)
            assert pcc(pred, target) == pytest.approx(
                oracle_pcc(pred.tolist(), target.tolist()), abs=1e-9)
            assert ccc(pred, target) == pytest.approx(
                oracle_ccc(pred.tolist(), target.tolist()), abs=1e-9)
            scores = rng.random(size=n)
            noisy = np.clip(scores + rng.normal(0, 0.1, size=n), 0, 1)
            assert acc_personality(noisy, scores) == pytest.approx(
                1.0 - float(np.mean(np.abs(noisy - scores))), abs=1e-9)

    def test_sklearn_cross_check(self):
        from sklearn.metrics import accuracy_score, f1_score
        rng = np.random.default_rng(7)
        for _ in range(50):
            k = int(rng.integers(2, 5))
            labels = rng.integers(0, k, size=30)
            preds = rng.integers(0, k, size=30)
            assert war(preds, labels) == pytest.approx(
                accuracy_score(labels, preds), abs=1e-12)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert weighted_f1(preds, labels, k) == pytest.approx(
                    f1_score(labels, preds, average="weighted",
                             labels=np.arange(k), zero_division=0.0),
                    abs=1e-12)
