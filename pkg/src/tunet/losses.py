"""Joint training objective (focal + dice) and classification metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import ShapeError

# Probabilities are clamped away from {0, 1} before any logarithm.
PROB_CLAMP = 1e-7


@dataclass
class LossConfig:
    """Weights of the joint objective."""
    alpha: float = 0.4
    gamma: float = 2.0
    dice_epsilon: float = 1.0

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.dice_epsilon < 0:
            raise ValueError(f"dice_epsilon must be >= 0, got {self.dice_epsilon}")


def focal_loss(cls_probs: Tensor, labels, gamma: float = 2.0) -> Tensor:
    """Mean focal loss -(1-p_t)^gamma * ln(p_t) over all elements.

    ``labels`` is a binary array the same shape as ``cls_probs``; p_t is the
    probability assigned to the true binary outcome of each element.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    y = np.asarray(labels, dtype=cls_probs.data.dtype)
    if y.shape != cls_probs.shape:
        raise ShapeError(f"labels shape {y.shape} does not match probs {cls_probs.shape}")
    p_t = cls_probs * y + (1.0 - cls_probs) * (1.0 - y)
    p_t = p_t.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    modulator = (1.0 - p_t) ** float(gamma)
    return -(modulator * p_t.log()).mean()


def dice(r, y, epsilon: float = 1.0) -> float:
    """Smoothed dice overlap (2*sum(r*y)+eps)/(sum(r)+sum(y)+eps).

    Accepts a single [H,W] map or a [C,H,W] stack; stacks return the mean
    over channels.
    """
    r = np.asarray(r, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if r.shape != y.shape:
        raise ShapeError(f"dice shapes differ: {r.shape} vs {y.shape}")
    if r.ndim == 2:
        r = r[None]
        y = y[None]
    inter = (r * y).sum(axis=(1, 2))
    denom = r.sum(axis=(1, 2)) + y.sum(axis=(1, 2))
    return float(np.mean((2.0 * inter + epsilon) / (denom + epsilon)))


def dice_loss(seg_probs: Tensor, target, epsilon: float = 1.0) -> Tensor:
    """1 minus the mean per-(sample, class) smoothed dice coefficient."""
    y = np.asarray(target, dtype=seg_probs.data.dtype)
    if y.shape != seg_probs.shape:
        raise ShapeError(f"target shape {y.shape} does not match probs {seg_probs.shape}")
    inter = (seg_probs * y).sum(axis=(2, 3))
    denom = seg_probs.sum(axis=(2, 3)) + y.sum(axis=(2, 3)) + epsilon
    per_channel = (2.0 * inter + epsilon) / denom
    return 1.0 - per_channel.mean()


def joint_loss(l_seg, l_cls, alpha: float = 0.4):
    """Weighted combination alpha*L_seg + (1-alpha)*L_cls."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * l_seg + (1.0 - alpha) * l_cls


@dataclass
class F1Report:
    """Per-class and averaged precision/recall/F1 for multi-label predictions."""
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    micro_f1: float
    micro_precision: float
    micro_recall: float

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f1_scores(pred, truth) -> F1Report:
    """Per-class precision/recall/F1 plus macro and micro averages.

    Both inputs are binary [N, C] arrays; any 0/0 ratio is defined as 0.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ShapeError(f"pred {pred.shape} and truth {truth.shape} must be matching 2-d arrays")
    pred = pred.astype(bool)
    truth = truth.astype(bool)
    tp = (pred & truth).sum(axis=0)
    fp = (pred & ~truth).sum(axis=0)
    fn = (~pred & truth).sum(axis=0)
    prec = _safe_div(tp, tp + fp)
    rec = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * prec * rec, prec + rec)
    micro_p = float(_safe_div(tp.sum(), tp.sum() + fp.sum()))
    micro_r = float(_safe_div(tp.sum(), tp.sum() + fn.sum()))
    micro_f1 = float(_safe_div(2 * micro_p * micro_r, micro_p + micro_r))
    return F1Report(
        precision=prec,
        recall=rec,
        f1=f1,
        support=truth.sum(axis=0),
        macro_f1=float(f1.mean()),
        micro_f1=micro_f1,
        micro_precision=micro_p,
        micro_recall=micro_r,
    )


def write_metrics_csv(report: F1Report, path) -> None:
    """Write the metric report: one row per class plus macro and micro rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision", "recall", "f1", "support"])
        for c in range(len(report.f1)):
            writer.writerow([c, report.precision[c], report.recall[c],
                             report.f1[c], int(report.support[c])])
        writer.writerow(["macro", report.macro_precision, report.macro_recall,
                         report.macro_f1, int(report.support.sum())])
        writer.writerow(["micro", report.micro_precision, report.micro_recall,
                         report.micro_f1, int(report.support.sum())])
