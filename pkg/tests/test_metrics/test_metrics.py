"""
Tests for segmentation, calibration and statistics metrics
"""
import numpy as np
import pytest
from scipy import stats

from src.metrics import (
    dice,
    ece,
    err_uncert_corr,
    evaluate_case,
    foreground_dice,
    majority_vote,
    nll,
    paired_t_test,
    pool_reliability,
    predictive_entropy,
    summarize,
)
from src.models.domain import CaseResult, LabelField
from src.models.errors import ShapeError


def _two_class(confidence, truth):
    """[2,1,N] field whose class-0 probability is `confidence`, plus [1,N] truth"""
    conf = np.asarray(confidence, dtype=np.float64)
    probs = np.stack([conf, 1.0 - conf])[:, None, :]
    return probs, np.asarray(truth)[None, :]


@pytest.fixture
def calibration_fixture():
    # confidences {0.6, 0.55} with one of two correct, {0.9, 0.8} both correct
    return _two_class([0.6, 0.55, 0.9, 0.8], [0, 1, 0, 0])


def _rank_oracle(x: np.ndarray) -> np.ndarray:
    """Average ranks by direct pairwise counting"""
    ranks = np.empty(x.size)
    for i in range(x.size):
        below = np.sum(x < x[i])
        ties = np.sum(x == x[i])
        ranks[i] = below + (ties + 1) / 2.0
    return ranks


class TestDice:
    """Overlap metrics"""

    def test_half_overlap(self):
        pred = np.array([[1, 1, 0, 0]])
        truth = np.array([[1, 0, 0, 0]])
        assert dice(pred, truth, 1) == pytest.approx(2 * 1 / 3)
        pred = np.array([[1, 1, 0, 0]])
        truth = np.array([[1, 0, 1, 0]])
        assert dice(pred, truth, 1) == pytest.approx(0.5)

    def test_identical_and_empty(self):
        mask = np.array([[0, 1], [1, 0]])
        assert dice(mask, mask, 1) == 1.0
        assert dice(np.zeros((2, 2)), np.zeros((2, 2)), 1) == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.integers(0, 3, (8, 8)), rng.integers(0, 3, (8, 8))
        for c in range(3):
            assert dice(a, b, c) == dice(b, a, c)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice(np.zeros((2, 2)), np.zeros((2, 3)), 1)

    def test_foreground_mean(self):
        pred = np.array([[0, 1, 2, 2]])
        truth = np.array([[0, 1, 2, 0]])
        assert foreground_dice(pred, truth, 3) == pytest.approx((1.0 + 2 / 3) / 2)

    def test_majority_vote_ties_go_low(self):
        raters = np.array([[[0, 1, 2]], [[1, 1, 2]], [[1, 0, 0]], [[0, 0, 0]]])
        np.testing.assert_array_equal(majority_vote(raters, 3), [[0, 0, 0]])
        np.testing.assert_array_equal(majority_vote(raters[:3], 3), [[1, 1, 2]])


class TestNLL:
    """Negative log-likelihood"""

    def test_fixture(self):
        probs = np.array([[[0.5, 0.75]], [[0.5, 0.25]]])
        truth = np.array([[0, 1]])
        assert nll(probs, truth) == pytest.approx((np.log(2) + np.log(4)) / 2, abs=1e-4)
        assert nll(probs, truth) == pytest.approx(1.0397, abs=1e-4)

    def test_uniform_is_ln2(self):
        probs = np.full((2, 4, 4), 0.5)
        assert nll(probs, np.zeros((4, 4), dtype=int)) == pytest.approx(np.log(2))

    def test_perfect_prediction(self):
        truth = np.array([[0, 1], [1, 0]])
        probs = LabelField.from_indices(truth[None], 2).onehot[0].astype(np.float64)
        assert nll(probs, truth) == 0.0

    def test_floor(self):
        probs = np.array([[[1.0]], [[0.0]]])
        assert nll(probs, np.array([[1]])) == pytest.approx(-np.log(1e-12))

    def test_zero_probability_class_channel(self):
        probs = np.array([[[0.7]], [[0.3]]])
        padded = np.concatenate([probs, np.zeros((1, 1, 1))])
        truth = np.array([[0]])
        assert nll(padded, truth) == nll(probs, truth)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            nll(np.full((2, 2, 2), 0.6), np.zeros((2, 2), dtype=int))

    def test_accepts_label_field(self):
        truth = LabelField.from_indices(np.array([[[0, 1]]]), 2)
        probs = np.array([[[0.5, 0.75]], [[0.5, 0.25]]])
        assert nll(probs, truth) == pytest.approx(1.0397, abs=1e-4)


class TestECE:
    """Expected calibration error"""

    def test_fixture_four_bins(self, calibration_fixture):
        probs, truth = calibration_fixture
        assert ece(probs, truth, bins=4) == pytest.approx(0.1125)

    def test_fixture_two_bins(self, calibration_fixture):
        probs, truth = calibration_fixture
        assert ece(probs, truth, bins=2) == pytest.approx(0.0375)

    def test_confident_and_correct(self):
        probs, truth = _two_class([1.0, 1.0, 1.0], [0, 0, 0])
        assert ece(probs, truth, bins=10) == 0.0

    def test_confident_and_wrong(self):
        probs, truth = _two_class([1.0, 1.0], [1, 1])
        assert ece(probs, truth, bins=10) == pytest.approx(1.0)

    def test_bin_rows(self, calibration_fixture):
        probs, truth = calibration_fixture
        value, rows = ece(probs, truth, bins=4, return_bins=True)
        assert len(rows) == 4
        assert sum(r["count"] for r in rows) == 4
        assert rows[2]["count"] == 2 and rows[2]["accuracy"] == 0.5
        assert rows[3]["confidence"] == pytest.approx(0.85)
        assert value == pytest.approx(0.1125)

    def test_bins_validated(self, calibration_fixture):
        with pytest.raises(ValueError):
            ece(*calibration_fixture, bins=0)


class TestErrorUncertaintyCorrelation:
    """Spearman correlation of entropy and errors"""

    def test_perfect_alignment(self):
        probs, truth = _two_class([0.9, 0.9, 0.6, 0.6], [0, 0, 1, 1])
        rho, degenerate = err_uncert_corr(probs, truth)
        assert rho == pytest.approx(1.0)
        assert not degenerate

    def test_constant_entropy_is_degenerate(self):
        probs, truth = _two_class([0.7] * 4, [0, 1, 0, 1])
        assert err_uncert_corr(probs, truth) == (0.0, True)

    def test_no_errors_is_degenerate(self):
        probs, truth = _two_class([0.9, 0.8, 0.7], [0, 0, 0])
        assert err_uncert_corr(probs, truth) == (0.0, True)

    def test_entropy_sums_over_classes(self):
        probs = np.random.default_rng(1).dirichlet([1.0, 1.0, 1.0], size=(4, 5)).transpose(2, 0, 1)
        single = predictive_entropy(probs)
        assert single.shape == (4, 5)
        np.testing.assert_allclose(predictive_entropy(probs[None])[0], single)
        expected = -(probs * np.log(probs)).sum(axis=0)
        np.testing.assert_allclose(single, expected)
        assert predictive_entropy(np.full((2, 3, 3), 0.5)) == pytest.approx(np.full((3, 3), np.log(2)))

    def test_entropy_rejects_flat_input(self):
        with pytest.raises(ShapeError):
            predictive_entropy(np.full((2, 6), 0.5))

    def test_matches_rank_oracle(self):
        rng = np.random.default_rng(0)
        conf = np.round(rng.uniform(0.5, 1.0, 60), 2)
        truth = rng.integers(0, 2, 60)
        probs, labels = _two_class(conf, truth)

        entropy = predictive_entropy(probs).ravel()
        errors = (probs.argmax(axis=0).ravel() != truth).astype(float)
        expected = np.corrcoef(_rank_oracle(entropy), _rank_oracle(errors))[0, 1]
        rho, _ = err_uncert_corr(probs, labels)
        assert rho == pytest.approx(expected, abs=1e-12)
        assert rho == pytest.approx(stats.spearmanr(entropy, errors)[0], abs=1e-12)


class TestStatistics:
    """Paired t-test and summaries"""

    def test_identical_runs(self):
        assert paired_t_test([0.5, 0.7, 0.9], [0.5, 0.7, 0.9]) == (0.0, 1.0)

    def test_symmetric_differences(self):
        t, p = paired_t_test([1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0])
        assert t == pytest.approx(0.0)
        assert p == pytest.approx(1.0)

    def test_direct_formula(self):
        a = np.array([0.82, 0.75, 0.91, 0.68, 0.79])
        b = np.array([0.80, 0.70, 0.85, 0.69, 0.74])
        d = a - b
        t_expected = d.mean() / (d.std(ddof=1) / np.sqrt(5))
        t, p = paired_t_test(a, b)
        assert t == pytest.approx(t_expected)
        assert p == pytest.approx(2 * stats.t.sf(abs(t_expected), 4))
        assert p == pytest.approx(stats.ttest_rel(a, b).pvalue)

    def test_constant_shift(self):
        t, p = paired_t_test([1.0, 2.0, 3.0], [0.5, 1.5, 2.5])
        assert t == np.inf
        assert p == 0.0

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])

    def test_summary_two_cases(self):
        results = [CaseResult(case_id=0, dsc=0.6), CaseResult(case_id=1, dsc=0.8)]
        report = summarize(results)
        assert list(report) == ["dsc", "nll", "ece", "corr"]
        assert report["dsc"]["mean"] == pytest.approx(0.7)
        assert report["dsc"]["std"] == pytest.approx(0.1414, abs=1e-4)
        assert all(set(v) == {"mean", "std"} for v in report.values())

    def test_summary_single_case(self):
        report = summarize([CaseResult(case_id=0, dsc=0.9, nll=0.2)])
        assert report["dsc"] == {"mean": 0.9, "std": 0.0}

    def test_summary_empty(self):
        with pytest.raises(ValueError):
            summarize([])


class TestEvaluateCase:
    """Per-case evaluation against the majority vote"""

    def test_perfect_case(self):
        raters = np.zeros((3, 4, 4), dtype=np.uint8)
        raters[:, 1:3, 1:3] = 1
        raters[2, 0, 0] = 1
        probs = np.zeros((2, 4, 4))
        probs[1] = majority_vote(raters, 2)
        probs[0] = 1.0 - probs[1]
        result, rows = evaluate_case(7, probs, raters, M=4, bins=10)
        assert result.case_id == 7
        assert result.dsc == 1.0
        assert result.nll == 0.0
        assert result.ece == 0.0
        assert result.corr_degenerate
        assert len(rows) == 10

    def test_pool_reliability(self):
        a = [{"lower": 0.5, "upper": 1.0, "count": 2, "accuracy": 1.0, "confidence": 0.9}]
        b = [{"lower": 0.5, "upper": 1.0, "count": 6, "accuracy": 0.5, "confidence": 0.7}]
        pooled = pool_reliability([a, b])
        assert pooled[0]["count"] == 8
        assert pooled[0]["accuracy"] == pytest.approx(0.625)
        assert pooled[0]["confidence"] == pytest.approx(0.75)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
