"""AUC, confusion metrics, exact binomial intervals and video-level evaluation."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from skelnas.stats import (REFERENCE_TABLE, ConfusionMatrix, UndefinedMetricError, aggregate_video,
                           binom_cdf, clopper_pearson, comparison_table, confusion, evaluate_videos,
                           metrics, roc_auc, round_half_up)

# reference rows: point estimate and interval for sensitivity, specificity, accuracy
REFERENCE_CELLS = {
    "NAS": ((76.2, 52.8, 91.8), (93.2, 87.1, 97.0), (90.6, 84.5, 94.9)),
    "Ensemble": ((71.4, 47.8, 88.7), (94.1, 88.2, 97.6), (90.6, 84.5, 94.9)),
    "GMA": ((70.0, 45.7, 88.1), (88.7, 81.5, 93.8), (85.9, 78.9, 91.3)),
    "Conventional": ((71.4, 47.8, 88.7), (72.9, 63.9, 80.7), (72.7, 64.5, 79.9)),
}
METRIC_NAMES = ("sensitivity", "specificity", "accuracy")
# the one cell no single rounding rule reproduces; see the ledger
KNOWN_MISMATCH = ("GMA", "specificity", "lower")


def oracle_interval(k, n, alpha=0.05):
    """Brute-force tail bisection on scipy's binomial distribution."""
    def bisect(f, target, increasing):
        lo, hi = 0.0, 1.0
        for _ in range(60):  # bracket width 2**-60
            mid = (lo + hi) / 2
            if (f(mid) < target) == increasing:
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2
    lower = 0.0 if k == 0 else bisect(lambda p: sps.binom.sf(k - 1, n, p), alpha / 2, True)
    upper = 1.0 if k == n else bisect(lambda p: sps.binom.cdf(k, n, p), alpha / 2, False)
    return lower, upper


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def _table_cells():
    cells = []
    for name, rows in REFERENCE_CELLS.items():
        for metric, (point, lo, hi) in zip(METRIC_NAMES, rows):
            for part, value in (("point", point), ("lower", lo), ("upper", hi)):
                marks = ()
                if (name, metric, part) == KNOWN_MISMATCH:
                    marks = pytest.mark.xfail(strict=True, reason="exact interval rounds to 81.4")
                cells.append(pytest.param(name, metric, part, value, marks=marks,
                                          id=f"{name}-{metric}-{part}"))
    return cells


class TestReferenceTable:
    @pytest.mark.parametrize("name,metric,part,value", _table_cells())
    def test_cell(self, name, metric, part, value):
        report = comparison_table(REFERENCE_TABLE).to_dict()
        row = next(r for r in report["rows"] if r["name"] == name)
        got = {"point": row[metric], "lower": row[metric + "_ci"][0], "upper": row[metric + "_ci"][1]}[part]
        assert got == value

    def test_render(self):
        text = comparison_table(REFERENCE_TABLE).render()
        assert "76.2 (52.8-91.8)" in text
        assert text.splitlines()[2].startswith("NAS")

    def test_bad_entries(self):
        with pytest.raises(ValueError):
            comparison_table([])
        with pytest.raises(ValueError):
            comparison_table([(" ", ConfusionMatrix(1, 1, 1, 1))])


class TestClopperPearson:
    def test_against_tail_oracle(self):
        worst = 0.0
        for n in range(1, 61):
            for k in range(n + 1):
                lo, hi = clopper_pearson(k, n)
                olo, ohi = oracle_interval(k, n)
                worst = max(worst, abs(lo - olo), abs(hi - ohi))
        assert worst <= 1e-6

    @pytest.mark.parametrize("k,n", [(0, 10), (10, 10), (3, 17), (102, 115), (16, 21), (500, 1000)])
    def test_against_beta_quantiles(self, k, n):
        lo, hi = clopper_pearson(k, n)
        blo = 0.0 if k == 0 else sps.beta.ppf(0.025, k, n - k + 1)
        bhi = 1.0 if k == n else sps.beta.ppf(0.975, k + 1, n - k)
        assert lo == pytest.approx(blo, abs=1e-9) and hi == pytest.approx(bhi, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 300), data=st.data())
    def test_contains_estimate(self, n, data):
        k = data.draw(st.integers(0, n))
        lo, hi = clopper_pearson(k, n)
        assert 0.0 <= lo <= k / n <= hi <= 1.0

    def test_wider_at_higher_confidence(self):
        a, b = clopper_pearson(7, 20, 0.9), clopper_pearson(7, 20, 0.99)
        assert b[0] < a[0] and b[1] > a[1]

    @pytest.mark.parametrize("k,n,c", [(3, 2, 0.95), (-1, 5, 0.95), (1, 0, 0.95), (1, 5, 1.0)])
    def test_bad_args(self, k, n, c):
        with pytest.raises(ValueError):
            clopper_pearson(k, n, c)

    @pytest.mark.parametrize("k,n,p", [(3, 10, 0.2), (0, 50, 0.01), (49, 50, 0.99), (7, 200, 0.5)])
    def test_binom_cdf(self, k, n, p):
        assert binom_cdf(k, n, p) == pytest.approx(sps.binom.cdf(k, n, p), rel=1e-9, abs=1e-300)


class TestAuc:
    def test_examples(self):
        assert roc_auc([0.1, 0.9], [0, 1]) == 1.0
        assert roc_auc([0.9, 0.1], [0, 1]) == 0.0
        assert roc_auc([0.5, 0.5], [0, 1]) == 0.5
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    @settings(max_examples=80, deadline=None)
    @given(data=st.data())
    def test_pair_count_oracle(self, data):
        n = data.draw(st.integers(2, 30))
        labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < n))
        scores = data.draw(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 1.0]), min_size=n, max_size=n))
        assert roc_auc(scores, labels) == pytest.approx(pair_count_auc(scores, labels), abs=1e-12)

    def test_one_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])


class TestConfusion:
    def test_threshold_inclusive(self):
        assert confusion([0.5, 0.49, 0.7, 0.1], [1, 1, 0, 0]) == ConfusionMatrix(1, 1, 1, 1)

    def test_metrics(self):
        sens, spec, acc = metrics(ConfusionMatrix(16, 8, 110, 5))
        assert sens == pytest.approx(100 * 16 / 21) and spec == pytest.approx(100 * 110 / 118)
        assert acc == pytest.approx(100 * 126 / 139)

    def test_undefined(self):
        with pytest.raises(UndefinedMetricError):
            metrics(ConfusionMatrix(0, 3, 4, 0))

    def test_round_half_up(self):
        assert round_half_up(0.25) == 0.3
        assert round_half_up(90.6475) == 90.6
        assert round_half_up(81.45) == 81.5


class TestVideoEvaluation:
    def test_median_aggregation(self):
        assert aggregate_video([0.1, 0.9, 0.8]) == 0.8
        assert aggregate_video([0.2, 0.4]) == pytest.approx(0.3)
        with pytest.raises(ValueError):
            aggregate_video([])

    def test_evaluate(self):
        scores = np.array([0.1, 0.2, 0.9, 0.6, 0.7, 0.8, 0.3, 0.6])
        labels = np.array([0, 0, 0, 1, 1, 1, 1, 1])
        vids = ["a", "a", "a", "b", "b", "b", "c", "c"]
        out = evaluate_videos(scores, labels, vids)
        # medians: a 0.2, b 0.7, c 0.45
        assert out["videos"] == 3
        assert out["confusion"] == {"tp": 1, "fp": 0, "tn": 1, "fn": 1}
        assert out["video_auc"] == 1.0
        assert out["video_accuracy"] == pytest.approx(200 / 3)
        assert out["window_auc"] == pytest.approx(pair_count_auc(scores, labels))
