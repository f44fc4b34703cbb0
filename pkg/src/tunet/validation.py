"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .model import INPUT_CHANNELS


def check_image_batch(X) -> np.ndarray:
    """Validate a [N, 4, S, S] image batch and return it as float32."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ShapeError(f"expected a 4-d image batch [N, {INPUT_CHANNELS}, S, S], "
                         f"got ndim={X.ndim}")
    n, c, h, w = X.shape
    if c != INPUT_CHANNELS:
        raise ShapeError(f"expected {INPUT_CHANNELS} channels, got {c}")
    if h != w:
        raise ShapeError(f"images must be square, got {h}x{w}")
    if n == 0:
        raise ShapeError("batch is empty")
    return X


def check_label_matrix(y, n_samples: int | None = None) -> np.ndarray:
    """Validate a binary multi-hot label matrix [N, C] and return it as float32."""
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != 2:
        raise ShapeError(f"expected a 2-d label matrix [N, C], got ndim={y.ndim}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ShapeError(f"got {y.shape[0]} label rows for {n_samples} images")
    if y.shape[1] < 2:
        raise ShapeError(f"need at least 2 classes, got {y.shape[1]}")
    bad = (y != 0.0) & (y != 1.0)
    if bad.any():
        raise ShapeError("labels must be binary (0 or 1)")
    return y
