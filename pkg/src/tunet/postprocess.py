"""Mask binarization, small-component noise removal, and per-class decision
thresholds fitted by least squared error on held-out probabilities."""

from __future__ import annotations

import csv

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError

DEFAULT_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)

# 4-connectivity for component labeling
_STRUCTURE = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def binarize(seg_probs, tau: float = 0.5) -> np.ndarray:
    """Threshold soft maps at tau; values equal to tau count as foreground."""
    probs = np.asarray(seg_probs)
    return (probs >= tau).astype(np.float32)


def default_min_area(side: int) -> int:
    """Noise-removal area floor, 4 px at side 64, scaled with (side/64)^2."""
    return max(1, round(4 * (side / 64.0) ** 2))


def denoise(mask, min_area: int) -> np.ndarray:
    """Drop every 4-connected foreground component smaller than min_area."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"denoise expects a 2-d mask, got shape {mask.shape}")
    if min_area < 1:
        raise ValueError(f"min_area must be >= 1, got {min_area}")
    binary = mask > 0
    if min_area == 1:
        return binary.astype(np.float32)
    labeled, n_components = ndimage.label(binary, structure=_STRUCTURE)
    if n_components == 0:
        return np.zeros_like(mask, dtype=np.float32)
    sizes = np.bincount(labeled.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labeled].astype(np.float32)


def fit_thresholds(val_probs, val_labels, grid=None) -> np.ndarray:
    """Per class, pick the grid threshold minimizing the squared error between
    thresholded predictions and binary labels; ties go to the smallest value.
    """
    probs = np.asarray(val_probs, dtype=np.float64)
    labels = np.asarray(val_labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} must be "
                         f"matching 2-d arrays")
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("threshold grid must be nonempty")
    # [G, N, C] squared errors; argmin over sorted grid returns the smallest
    # optimal threshold.
    errors = ((probs[None] >= grid[:, None, None]).astype(np.float64)
              - labels[None]) ** 2
    totals = errors.sum(axis=1)
    best = totals.argmin(axis=0)
    return grid[best].astype(np.float64)


def predict_labels(cls_probs, thresholds, force_argmax: bool = False) -> np.ndarray:
    """Binary predictions pred[i, c] = 1 iff prob >= threshold[c].

    All-zero rows are allowed unless force_argmax is set, in which case the
    highest-probability class of such a row is switched on.
    """
    probs = np.asarray(cls_probs)
    thresholds = np.asarray(thresholds)
    if probs.ndim != 2 or thresholds.shape != (probs.shape[1],):
        raise ShapeError(f"probs {probs.shape} incompatible with thresholds "
                         f"{thresholds.shape}")
    pred = (probs >= thresholds[None, :]).astype(np.int64)
    if force_argmax:
        empty = pred.sum(axis=1) == 0
        pred[empty, probs[empty].argmax(axis=1)] = 1
    return pred


def save_thresholds(path, thresholds) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "threshold"])
        for c, t in enumerate(np.asarray(thresholds)):
            writer.writerow([c, float(t)])


def load_thresholds(path) -> np.ndarray:
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["class", "threshold"]:
            raise DataError(f"{path}: expected header class,threshold, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"{path} line {line_no}: expected 2 columns")
            values.append(float(row[1]))
    return np.asarray(values, dtype=np.float64)
