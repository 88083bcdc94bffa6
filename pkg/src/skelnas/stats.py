"""Evaluation statistics: AUC, confusion matrices, exact binomial intervals."""
from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks handle ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aggregate_video(window_scores: Sequence[float]) -> float:
    """Median of a video's window probabilities."""
    if len(window_scores) == 0:
        raise ValueError("cannot aggregate a video without windows")
    return float(np.median(np.asarray(window_scores, dtype=float)))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    pred = np.asarray(scores, dtype=float) >= threshold
    y = np.asarray(labels).astype(bool)
    return ConfusionMatrix(
        tp=int((pred & y).sum()), fp=int((pred & ~y).sum()),
        tn=int((~pred & ~y).sum()), fn=int((~pred & y).sum()),
    )


def rates(cm: ConfusionMatrix) -> tuple[Fraction, Fraction, Fraction]:
    """Sensitivity, specificity and accuracy as exact fractions."""
    if cm.tp + cm.fn == 0:
        raise UndefinedMetricError("sensitivity: no positive cases")
    if cm.tn + cm.fp == 0:
        raise UndefinedMetricError("specificity: no negative cases")
    return (Fraction(cm.tp, cm.tp + cm.fn), Fraction(cm.tn, cm.tn + cm.fp),
            Fraction(cm.tp + cm.tn, cm.total))


def metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """(sensitivity, specificity, accuracy) in percent, full precision."""
    return tuple(float(r) * 100.0 for r in rates(cm))


def round_half_up(x: float, places: int = 1) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


# --- exact binomial confidence interval -------------------------------------

@lru_cache(maxsize=512)
def _log_binom(n: int) -> np.ndarray:
    i = np.arange(n + 1)
    return gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)


def _log_pmf_terms(n: int, p: float) -> np.ndarray:
    i = np.arange(n + 1)
    return _log_binom(n) + i * math.log(p) + (n - i) * math.log1p(-p)


def binom_cdf(k: int, n: int, p: float) -> float:
    """P(X <= k) for X ~ Binomial(n, p), summed in log space."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    terms = _log_pmf_terms(n, p)
    lo, hi = terms[: k + 1], terms[k + 1:]
    # sum the smaller tail directly to keep precision near 0 and 1
    m_lo, m_hi = lo.max(), hi.max()
    s_lo = math.exp(m_lo) * np.exp(lo - m_lo).sum()
    s_hi = math.exp(m_hi) * np.exp(hi - m_hi).sum()
    return float(s_lo / (s_lo + s_hi))


def _bisect(f, target: float, increasing: bool, tol: float = 1e-12) -> float:
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (f(mid) < target) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact two-sided interval for a binomial proportion, as fractions in [0, 1]."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    alpha = 1.0 - confidence
    if k == 0:
        lo = 0.0
    else:
        # P(X >= k) rises with p
        lo = _bisect(lambda p: 1.0 - binom_cdf(k - 1, n, p), alpha / 2, increasing=True)
    if k == n:
        hi = 1.0
    else:
        # P(X <= k) falls with p
        hi = _bisect(lambda p: binom_cdf(k, n, p), alpha / 2, increasing=False)
    return lo, hi


# --- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalMetrics:
    sensitivity: float
    specificity: float
    accuracy: float
    sensitivity_ci: tuple[float, float]
    specificity_ci: tuple[float, float]
    accuracy_ci: tuple[float, float]
    auc: float | None = None

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, auc: float | None = None,
                       confidence: float = 0.95) -> "EvalMetrics":
        sens, spec, acc = metrics(cm)
        pct = lambda iv: (iv[0] * 100.0, iv[1] * 100.0)  # noqa: E731
        return cls(
            sens, spec, acc,
            pct(clopper_pearson(cm.tp, cm.tp + cm.fn, confidence)),
            pct(clopper_pearson(cm.tn, cm.tn + cm.fp, confidence)),
            pct(clopper_pearson(cm.tp + cm.tn, cm.total, confidence)),
            auc,
        )

    def rounded(self) -> dict:
        r = round_half_up
        return {
            "sensitivity": r(self.sensitivity), "sensitivity_ci": [r(v) for v in self.sensitivity_ci],
            "specificity": r(self.specificity), "specificity_ci": [r(v) for v in self.specificity_ci],
            "accuracy": r(self.accuracy), "accuracy_ci": [r(v) for v in self.accuracy_ci],
        }


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    cm: ConfusionMatrix
    metrics: EvalMetrics


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]

    def render(self) -> str:
        head = f"{'Method':<14}{'TP':>4}{'FP':>4}{'TN':>5}{'FN':>4}  {'Sensitivity':<20}{'Specificity':<20}{'Accuracy':<20}"
        lines = [head, "-" * len(head)]
        for row in self.rows:
            d = row.metrics.rounded()
            cell = lambda k: f"{d[k]:.1f} ({d[k + '_ci'][0]:.1f}-{d[k + '_ci'][1]:.1f})"  # noqa: E731
            lines.append(
                f"{row.name:<14}{row.cm.tp:>4}{row.cm.fp:>4}{row.cm.tn:>5}{row.cm.fn:>4}  "
                f"{cell('sensitivity'):<20}{cell('specificity'):<20}{cell('accuracy'):<20}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "confidence": 0.95,
            "interval": "clopper-pearson",
            "rows": [
                {"name": r.name, "confusion": asdict(r.cm), **r.metrics.rounded(),
                 "exact": {"sensitivity": r.metrics.sensitivity, "specificity": r.metrics.specificity,
                           "accuracy": r.metrics.accuracy}}
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def comparison_table(entries: Sequence[tuple[str, ConfusionMatrix]]) -> ComparisonReport:
    if not entries:
        raise ValueError("comparison table needs at least one entry")
    rows = []
    for name, cm in entries:
        if not name or not name.strip():
            raise ValueError("method name must be non-empty")
        rows.append(ComparisonRow(name, cm, EvalMetrics.from_confusion(cm)))
    return ComparisonReport(tuple(rows))


# Reference confusion matrices on the 139-infant external test set.
REFERENCE_TABLE = (
    ("NAS", ConfusionMatrix(16, 8, 110, 5)),
    ("Ensemble", ConfusionMatrix(15, 7, 111, 6)),
    ("GMA", ConfusionMatrix(14, 13, 102, 6)),
    ("Conventional", ConfusionMatrix(15, 32, 86, 6)),
)


def evaluate_videos(window_scores: np.ndarray, labels: np.ndarray, video_ids: Sequence[str],
                    threshold: float = 0.5) -> dict:
    """Window scores -> per-video medians -> AUC, confusion and interval metrics."""
    groups: dict[str, list[int]] = {}
    for i, vid in enumerate(video_ids):
        groups.setdefault(vid, []).append(i)
    vids = sorted(groups)
    v_scores = np.array([aggregate_video(window_scores[groups[v]]) for v in vids])
    v_labels = np.array([int(labels[groups[v][0]]) for v in vids])
    cm = confusion(v_scores, v_labels, threshold)
    out = {
        "threshold": threshold,
        "aggregation": "median of window probabilities",
        "videos": len(vids),
        "window_auc": roc_auc(window_scores, labels),
        "video_auc": roc_auc(v_scores, v_labels),
        "confusion": asdict(cm),
        "video_accuracy": float(rates(cm)[2]) * 100.0,
    }
    try:
        m = EvalMetrics.from_confusion(cm, out["video_auc"])
        out.update(m.rounded())
    except UndefinedMetricError:
        pass
    return out
