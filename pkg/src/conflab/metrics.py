"""Unsupervised QE metrics, Pearson correlation, and detection metrics.

Sentence metrics come in a probability-based family (TP, Softmax-Ent,
Sent-Std) and a confidence-based family (Conf, Sent-Std-Conf), plus Monte
Carlo dropout aggregates (D-TP, D-Conf, D-Comb). Detection quality is scored
threshold-free with AUROC / AUPR / EER / DET; all four depend only on score
order, so any strictly monotone transform of the scores leaves them fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import log_floored
from .errors import CorrelationUndefinedError, SingleClassError
from .inference import ForcedScore


# ---------------------------------------------------------------------------
# Sentence-level metrics
# ---------------------------------------------------------------------------


def metric_tp(forced: ForcedScore) -> float:
    """Length-normalized translation probability: mean of log p(y_t)."""
    return float(forced.logp.mean())


def metric_softmax_ent(distributions: np.ndarray) -> float:
    """Mean entropy (nats) of the step distributions. Higher = less certain."""
    p = np.asarray(distributions)
    return float(-(p * log_floored(p)).sum(axis=-1).mean())


def metric_sent_std(forced: ForcedScore) -> float:
    """Population standard deviation of the token log-probabilities."""
    return float(np.std(forced.logp))


def metric_conf(forced: ForcedScore, log_c: bool = False) -> float:
    """Mean confidence (raw c by default; log c behind the switch)."""
    values = log_floored(forced.conf) if log_c else forced.conf
    return float(np.mean(values))


def metric_sent_std_conf(forced: ForcedScore) -> float:
    """Population standard deviation of word-level log-confidence."""
    return float(np.std(log_floored(forced.conf)))


def metric_d_family(passes: list[ForcedScore]) -> tuple[float, float, float]:
    """(D-TP, D-Conf, D-Comb) over K stochastic passes.

    D-Comb is computed as D-TP + D-Conf, the algebraically equal form of the
    per-pass mean of (Conf_k + TP_k), so the linearity identity is exact.
    """
    if not passes:
        raise SingleClassError("need at least one pass")
    d_tp = float(np.mean([metric_tp(f) for f in passes]))
    d_conf = float(np.mean([metric_conf(f) for f in passes]))
    return d_tp, d_conf, d_tp + d_conf


@dataclass
class ScoredSentence:
    """Per-sentence metric record feeding correlation and detection reports."""

    sentence_id: int
    length: int
    tp: float
    softmax_ent: float
    sent_std: float
    conf: float
    sent_std_conf: float
    d_tp: float | None = None
    d_conf: float | None = None
    d_comb: float | None = None
    gold: float | None = None           # DA-proxy or binary label
    domain: str = "in-domain"
    corrupted_fraction: float = 0.0

    METRIC_FIELDS = (
        "tp", "softmax_ent", "sent_std", "conf", "sent_std_conf",
        "d_tp", "d_conf", "d_comb",
    )

    def as_row(self) -> dict:
        row = {
            "sentence_id": self.sentence_id,
            "length": self.length,
            "gold": self.gold,
            "domain": self.domain,
            "corrupted_fraction": self.corrupted_fraction,
        }
        for name in self.METRIC_FIELDS:
            row[name] = getattr(self, name)
        return row


# Direction of each metric: True when larger values indicate higher quality.
METRIC_HIGHER_IS_BETTER = {
    "tp": True,
    "softmax_ent": False,
    "sent_std": False,
    "conf": True,
    "sent_std_conf": False,
    "d_tp": True,
    "d_conf": True,
    "d_comb": True,
}


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise CorrelationUndefinedError("need two equal-length vectors of size >= 2")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = np.sqrt((dx * dx).sum())
    sy = np.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise CorrelationUndefinedError("correlation undefined for constant input")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Detection metrics
# ---------------------------------------------------------------------------


@dataclass
class DetectionReport:
    auroc: float
    aupr: float
    eer: float
    det: float
    positives: int
    negatives: int
    positive_high: bool
    positive_class: str = "positive"

    def as_row(self) -> dict:
        return {
            "auroc": self.auroc,
            "aupr": self.aupr,
            "eer": self.eer,
            "det": self.det,
            "positives": self.positives,
            "negatives": self.negatives,
            "positive_class": self.positive_class,
        }


def _roc_counts(scores: np.ndarray, labels: np.ndarray):
    """Cumulative TP/FP walking thresholds from high to low.

    Equal scores are grouped into a single threshold. Returns (tp, fp) arrays
    of length (#distinct scores + 1), starting at the classify-nothing point.
    """
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    l = labels[order]
    boundaries = np.nonzero(np.diff(s))[0]
    ends = np.concatenate([boundaries, [len(s) - 1]])
    tp_cum = np.cumsum(l)[ends]
    fp_cum = np.cumsum(1 - l)[ends]
    return (
        np.concatenate([[0], tp_cum]).astype(np.int64),
        np.concatenate([[0], fp_cum]).astype(np.int64),
    )


def detection_metrics(scores, labels, positive_high: bool = True, positive_class: str = "positive") -> DetectionReport:
    """AUROC / AUPR / EER / DET for binary labels (1 = positive).

    `positive_high` states whether larger scores indicate the positive
    class; when False the scores are negated first. AUROC counts pairwise
    wins with ties at 1/2; AUPR step-integrates the PR curve over descending
    thresholds; EER linearly interpolates the FPR = FNR crossing; DET is the
    minimum achievable misclassification fraction.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise SingleClassError("scores and labels must be equal-length vectors")
    pos = int(labels.sum())
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        raise SingleClassError("both classes must be present")
    if not positive_high:
        scores = -scores

    tp, fp = _roc_counts(scores, labels)

    # AUROC via exact pairwise win/tie counts (integer arithmetic).
    wins = 0
    ties = 0
    for i in range(1, len(tp)):
        d_tp = tp[i] - tp[i - 1]
        d_fp = fp[i] - fp[i - 1]
        wins += int(d_tp) * int(neg - fp[i])    # negatives strictly below this score
        ties += int(d_tp) * int(d_fp)           # negatives sharing this score
    auroc = (wins + 0.5 * ties) / (pos * neg)

    # AUPR: step integration over recall (ascending with descending threshold).
    aupr = 0.0
    prev_recall = 0.0
    for i in range(1, len(tp)):
        if tp[i] + fp[i] == 0:
            continue
        recall = tp[i] / pos
        precision = tp[i] / (tp[i] + fp[i])
        aupr += (recall - prev_recall) * precision
        prev_recall = recall

    # EER: find where FPR = FNR, interpolating linearly between thresholds.
    fpr = fp / neg
    fnr = (pos - tp) / pos
    diff = fnr - fpr  # starts at +1 (classify nothing), ends at -1
    eer = None
    for i in range(1, len(diff)):
        if diff[i] == 0.0:
            eer = float(fpr[i])
            break
        if diff[i] < 0.0:
            d0, d1 = diff[i - 1], diff[i]
            t = d0 / (d0 - d1)
            eer = float(fpr[i - 1] + t * (fpr[i] - fpr[i - 1]))
            break
    if eer is None:
        eer = float(fpr[-1])

    # DET: minimum misclassification probability over all thresholds.
    det = float(np.min((fp + (pos - tp)) / (pos + neg)))

    return DetectionReport(
        auroc=float(auroc),
        aupr=float(aupr),
        eer=eer,
        det=det,
        positives=pos,
        negatives=neg,
        positive_high=positive_high,
        positive_class=positive_class,
    )


# ---------------------------------------------------------------------------
# Density report (miscalibration view)
# ---------------------------------------------------------------------------


@dataclass
class DensityReport:
    bins: int
    prob_correct: np.ndarray
    prob_incorrect: np.ndarray
    conf_correct: np.ndarray
    conf_incorrect: np.ndarray
    over_confident_prob: float      # incorrect tokens with probability > hi
    under_confident_prob: float     # correct tokens with probability < lo
    over_confident_conf: float
    under_confident_conf: float
    hi_threshold: float
    lo_threshold: float
    n_correct: int
    n_incorrect: int


def density_report(
    records, bins: int = 20, hi_threshold: float = 0.7, lo_threshold: float = 0.3
) -> DensityReport:
    """Binned score densities split by token correctness.

    `records` is an iterable of (probability, confidence, correct_flag).
    Rates are reported per §-style definition: share of incorrect tokens
    scored above hi_threshold and of correct tokens scored below lo_threshold.
    """
    rows = list(records)
    probs = np.array([r[0] for r in rows], dtype=np.float64)
    confs = np.array([r[1] for r in rows], dtype=np.float64)
    correct = np.array([bool(r[2]) for r in rows])
    edges = np.linspace(0.0, 1.0, bins + 1)

    def hist(x):
        return np.histogram(x, bins=edges)[0]

    n_c = int(correct.sum())
    n_i = len(rows) - n_c

    def rate(x, mask, predicate):
        if not mask.any():
            return 0.0
        return float(predicate(x[mask]).mean())

    return DensityReport(
        bins=bins,
        prob_correct=hist(probs[correct]),
        prob_incorrect=hist(probs[~correct]),
        conf_correct=hist(confs[correct]),
        conf_incorrect=hist(confs[~correct]),
        over_confident_prob=rate(probs, ~correct, lambda v: v > hi_threshold),
        under_confident_prob=rate(probs, correct, lambda v: v < lo_threshold),
        over_confident_conf=rate(confs, ~correct, lambda v: v > hi_threshold),
        under_confident_conf=rate(confs, correct, lambda v: v < lo_threshold),
        hi_threshold=hi_threshold,
        lo_threshold=lo_threshold,
        n_correct=n_c,
        n_incorrect=n_i,
    )
