"""Evaluation metrics: multiclass MCC, micro-F1, and pixel-overlap segmentation
scores (Jaccard, F1/Dice, precision, recall)."""

import json
from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted class

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("confusion matrix entries must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_class):
        cm = np.zeros((n_class, n_class), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            cm[t, p] += 1
        return cls(cm)

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class MetricReport:
    n_samples: int
    aggregation: str = "per-image-mean"
    mcc: float = None
    f1_micro: float = None
    jaccard: float = None
    f1: float = None
    precision: float = None
    recall: float = None
    degenerate: bool = False

    def to_json(self):
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, indent=2)


def mcc(cm: ConfusionMatrix):
    """Multiclass Matthews correlation coefficient (the R_K statistic).

    Degenerate cases (all predictions or all truths in one class) return 0.
    """
    c = np.asarray(cm.counts, dtype=np.float64)
    if c.sum() == 0:
        raise ValueError("confusion matrix is empty")
    s = c.sum()
    correct = np.trace(c)
    t = c.sum(axis=1)  # true counts per class
    p = c.sum(axis=0)  # predicted counts per class
    cov_tp = correct * s - t @ p
    denom = np.sqrt(s * s - p @ p) * np.sqrt(s * s - t @ t)
    if denom == 0:
        return 0.0
    return float(cov_tp / denom)


def mcc_is_degenerate(cm: ConfusionMatrix):
    c = np.asarray(cm.counts, dtype=np.float64)
    s = c.sum()
    t, p = c.sum(axis=1), c.sum(axis=0)
    return bool(np.sqrt(s * s - p @ p) * np.sqrt(s * s - t @ t) == 0)


def f1_micro(cm: ConfusionMatrix):
    """Micro-averaged F1; equals accuracy for single-label multiclass."""
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    return float(np.trace(cm.counts) / cm.total)


def classification_report(y_true, y_pred, n_class) -> MetricReport:
    cm = ConfusionMatrix.from_predictions(y_true, y_pred, n_class)
    return MetricReport(
        n_samples=cm.total,
        aggregation="pooled",
        mcc=mcc(cm),
        f1_micro=f1_micro(cm),
        degenerate=mcc_is_degenerate(cm),
    )


def seg_scores(pred_mask, gt_mask):
    """(jaccard, f1, precision, recall) from two binary masks.

    Both masks empty counts as a perfect prediction: all four scores are 1.
    """
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    for m in (pred, gt):
        vals = np.unique(m)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("masks must be binary")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    tp = np.sum(pred & gt)
    fp = np.sum(pred & ~gt)
    fn = np.sum(~pred & gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    jaccard = tp / (tp + fp + fn)
    f1 = 2 * tp / (2 * tp + fp + fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return float(jaccard), float(f1), float(precision), float(recall)


def dataset_seg_report(pairs, aggregation="per-image-mean") -> MetricReport:
    """Aggregate segmentation scores over (pred, gt) mask pairs.

    per-image-mean (default) averages per-image scores; pooled accumulates
    pixel counts over the whole dataset before scoring.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty sequence of mask pairs")
    if aggregation == "per-image-mean":
        scores = np.array([seg_scores(p, g) for p, g in pairs])
        j, f1, prec, rec = scores.mean(axis=0)
    elif aggregation == "pooled":
        tp = fp = fn = 0
        for p, g in pairs:
            p = np.asarray(p).astype(bool)
            g = np.asarray(g).astype(bool)
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
            tp += np.sum(p & g)
            fp += np.sum(p & ~g)
            fn += np.sum(~p & g)
        if tp + fp + fn == 0:
            j = f1 = prec = rec = 1.0
        else:
            j = tp / (tp + fp + fn)
            f1 = 2 * tp / (2 * tp + fp + fn)
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return MetricReport(
        n_samples=len(pairs), aggregation=aggregation,
        jaccard=float(j), f1=float(f1), precision=float(prec), recall=float(rec),
    )
