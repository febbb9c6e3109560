"""Distortion metrics, ROC/AUC analysis and threshold-based detection.

The detection statistic is the synchronisation confidence score; the
adversarial class scores LOW, so a clip is flagged adversarial when its
confidence falls strictly below the threshold.  Ties at the threshold
count as benign.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


def l2_distortion(a: np.ndarray, b: np.ndarray) -> float:
    """Per-pixel RMS difference per frame, averaged over frames.

    A uniform change of +4 to every pixel yields exactly 4, so values land
    on a per-pixel scale regardless of resolution or clip length.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    frames = a.shape[0]
    per_frame = np.sqrt(((a - b) ** 2).reshape(frames, -1).mean(axis=1))
    return float(per_frame.mean())


def linf_distortion(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute elementwise difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)))


def db(x: np.ndarray) -> float:
    """Peak level in decibels: 20 * log10(max |x_i|)."""
    peak = float(np.max(np.abs(np.asarray(x, dtype=np.float64))))
    if peak == 0.0:
        raise ValueError("db is undefined for an all-zero signal")
    return 20.0 * np.log10(peak)


def db_distortion(delta: np.ndarray, x: np.ndarray) -> float:
    """Loudness of a perturbation relative to its carrier signal.

    More negative means quieter; equal peaks give 0 dB.
    """
    return db(delta) - db(x)


@dataclass
class RocCurve:
    """(FPR, TPR) pairs, one per threshold, endpoints (0,0) and (1,1).

    Thresholds ascend; a clip is called adversarial when score < threshold,
    so both rates are non-decreasing along the curve.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def area(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr))


def roc_curve(benign_scores, adv_scores) -> RocCurve:
    benign = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    if benign.size == 0 or adv.size == 0:
        raise ValueError("both score lists must be non-empty")
    # sweep the decision rule (score < t) upward through every distinct score;
    # class ties at one value move both rates at once, tracing a diagonal
    values = np.unique(np.concatenate((benign, adv)))
    fpr = [0.0]
    tpr = [0.0]
    thresholds = [float(values[0])]
    for v in values:
        fpr.append(float(np.mean(benign < v)))
        tpr.append(float(np.mean(adv < v)))
        thresholds.append(float(v))
    fpr.append(1.0)
    tpr.append(1.0)
    thresholds.append(np.inf)
    # first point duplicates (0,0) when v=min; drop the duplicate
    return RocCurve(np.array(fpr[1:]), np.array(tpr[1:]), np.array(thresholds[1:]))


def auc(benign_scores, adv_scores) -> float:
    """Probability a random benign score exceeds a random adversarial one,
    ties counted half.  Rank-based, equal to the area under `roc_curve`."""
    benign = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    if benign.size == 0 or adv.size == 0:
        raise ValueError("both score lists must be non-empty")
    ranks = rankdata(np.concatenate((benign, adv)))
    benign_rank_sum = ranks[: benign.size].sum()
    wins = benign_rank_sum - benign.size * (benign.size + 1) / 2.0
    return float(wins / (benign.size * adv.size))


def auc_pair_count(benign_scores, adv_scores) -> float:
    """Oracle AUC by explicit pair counting (quadratic; for verification)."""
    benign = np.asarray(benign_scores, dtype=np.float64)[:, None]
    adv = np.asarray(adv_scores, dtype=np.float64)[None, :]
    wins = (benign > adv).sum() + 0.5 * (benign == adv).sum()
    return float(wins / benign.size / adv.size)


def _confusion(scores, labels, threshold: float):
    # positive class = adversarial, predicted when score < threshold
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pred = scores < threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    return tp, fp, fn, tn


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def f1_scores(scores, labels, threshold: float) -> tuple[float, float]:
    """(adversarial F1, benign F1) for the rule score < threshold."""
    tp, fp, fn, tn = _confusion(scores, labels, threshold)
    return _f1(tp, fp, fn), _f1(tn, fn, fp)


def select_threshold(scores, labels) -> float:
    """Threshold maximizing the mean of adversarial and benign F1.

    Candidates are midpoints between consecutive distinct validation
    scores, bracketed by the two trivial rules (everything benign /
    everything adversarial); every possible decision rule is therefore
    represented.  Equal objectives resolve to the smaller threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if not labels.any() or labels.all():
        raise ValueError("validation scores must contain both classes")
    distinct = np.unique(scores)
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    candidates = np.concatenate(([distinct[0] - 1.0], midpoints, [distinct[-1] + 1.0]))
    best_tau, best_obj = None, -1.0
    for tau in candidates:
        f1_adv, f1_ben = f1_scores(scores, labels, float(tau))
        obj = (f1_adv + f1_ben) / 2.0
        if obj > best_obj + 1e-15:
            best_tau, best_obj = float(tau), obj
    return best_tau


@dataclass
class DetectionReport:
    auc: float
    threshold: float
    f1_benign: float
    f1_adv: float
    f1_avg: float
    counts: dict = field(default_factory=dict)
    n_benign: int = 0
    n_adv: int = 0
    scores_ref: str | None = None


def evaluate(scores, labels, threshold: float, scores_ref: str | None = None) -> DetectionReport:
    """Apply a calibrated threshold to labeled test scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.size == 0:
        raise ValueError("test scores must be non-empty")
    if not labels.any() or labels.all():
        raise ValueError("test scores must contain both classes")
    tp, fp, fn, tn = _confusion(scores, labels, threshold)
    f1_adv, f1_ben = _f1(tp, fp, fn), _f1(tn, fn, fp)
    return DetectionReport(
        auc=auc(scores[~labels], scores[labels]),
        threshold=float(threshold),
        f1_benign=f1_ben,
        f1_adv=f1_adv,
        f1_avg=(f1_adv + f1_ben) / 2.0,
        counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        n_benign=int(np.sum(~labels)),
        n_adv=int(np.sum(labels)),
        scores_ref=scores_ref,
    )


# --------------------------------------------------------------------------
# artifact writers


def write_report_json(path, fields: dict) -> None:
    Path(path).write_text(json.dumps(fields, indent=1, sort_keys=True) + "\n")


def write_roc_csv(path, curve: RocCurve) -> None:
    lines = ["fpr,tpr,threshold"]
    for f, t, tau in zip(curve.fpr, curve.tpr, curve.thresholds):
        lines.append(f"{f!r},{t!r},{tau!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_hist_csv(path, benign_scores, adv_scores, bins: int = 20) -> None:
    """Binned confidence histograms for a benign-vs-adversarial plot."""
    benign = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    combined = np.concatenate((benign, adv))
    lo, hi = float(combined.min()), float(combined.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    b_counts, _ = np.histogram(benign, bins=edges)
    a_counts, _ = np.histogram(adv, bins=edges)
    lines = ["bin_lo,bin_hi,benign_count,adv_count"]
    for i in range(bins):
        lines.append(f"{edges[i]!r},{edges[i + 1]!r},{int(b_counts[i])},{int(a_counts[i])}")
    Path(path).write_text("\n".join(lines) + "\n")
