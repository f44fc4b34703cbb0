"""Scikit-learn style front end over the network, trainer, and
post-processing stack."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Sample, split
from .losses import f1_scores
from .model import TUNetConfig, forward, init_params
from .postprocess import (binarize, default_min_area, denoise, fit_thresholds,
                          predict_labels)
from .train import TrainConfig, evaluate, train
from .validation import check_image_batch, check_label_matrix


def _as_samples(X: np.ndarray, y: np.ndarray) -> list[Sample]:
    samples = []
    for i in range(X.shape[0]):
        labels = frozenset(int(c) for c in np.flatnonzero(y[i]))
        samples.append(Sample(id=f"s{i:06d}", image=X[i], labels=labels))
    return samples


class TUNetClassifier(BaseEstimator):
    """Multi-label image classifier with a per-class segmentation branch.

    fit() expects X as a [N, 4, S, S] float array (RGBY planes in [0, 1],
    S a power-of-two multiple of 2**levels) and y as a binary [N, C] matrix.
    A validation split is carved from the training data for early stopping
    and per-class threshold fitting.
    """

    def __init__(self, levels: int = 3, base_width: int = 8,
                 dropout: float = 0.25, alpha: float = 0.4, gamma: float = 2.0,
                 dice_epsilon: float = 1.0, batch_size: int = 8,
                 max_epochs: int = 50, patience: int = 5,
                 initial_lr: float = 0.005, cycle_len: int = 10,
                 val_fraction: float = 0.1, augment: bool = True,
                 green_threshold: float = 0.5, seed: int = 0):
        self.levels = levels
        self.base_width = base_width
        self.dropout = dropout
        self.alpha = alpha
        self.gamma = gamma
        self.dice_epsilon = dice_epsilon
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.initial_lr = initial_lr
        self.cycle_len = cycle_len
        self.val_fraction = val_fraction
        self.augment = augment
        self.green_threshold = green_threshold
        self.seed = seed

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("this TUNetClassifier instance is not fitted; "
                                 "call fit() first")

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, initial_lr=self.initial_lr,
            cycle_len=self.cycle_len, alpha=self.alpha, gamma=self.gamma,
            dice_epsilon=self.dice_epsilon, green_threshold=self.green_threshold,
            augment=self.augment, seed=self.seed)

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_label_matrix(y, X.shape[0])
        side = X.shape[2]
        n_classes = y.shape[1]
        self.config_ = TUNetConfig(side=side, n_classes=n_classes,
                                   levels=self.levels, base_width=self.base_width,
                                   dropout=self.dropout)
        self.config_.validate()
        samples = _as_samples(X, y)
        ids = [s.id for s in samples]
        train_ids, val_ids = split(ids, self.val_fraction, rng_seed=self.seed)
        if not val_ids:   # tiny datasets: validate on the training set itself
            train_ids, val_ids = ids, ids
        by_id = {s.id: s for s in samples}
        train_samples = [by_id[i] for i in train_ids]
        val_samples = [by_id[i] for i in val_ids]

        params = init_params(self.config_, seed=self.seed)
        tc = self._train_config()
        result = train(params, self.config_, train_samples, val_samples, tc)
        self.params_ = result.best_params
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch

        _, _, val_probs = evaluate(self.params_, self.config_, val_samples, tc)
        val_truth = np.stack([
            np.isin(np.arange(n_classes), list(s.labels)).astype(np.float32)
            for s in val_samples])
        self.thresholds_ = fit_thresholds(val_probs, val_truth)
        self.n_classes_ = n_classes
        self.side_ = side
        return self

    def _forward_batches(self, X: np.ndarray, batch_size: int = 16):
        seg, cls = [], []
        for start in range(0, X.shape[0], batch_size):
            out = forward(self.params_, self.config_, X[start:start + batch_size],
                          training=False)
            seg.append(out.seg_probs.data)
            cls.append(out.cls_probs.data)
        return np.concatenate(seg), np.concatenate(cls)

    def predict_proba(self, X) -> np.ndarray:
        """Per-class probabilities, shape [N, C]."""
        self._check_fitted()
        X = check_image_batch(X)
        _, cls = self._forward_batches(X)
        return cls

    def predict(self, X) -> np.ndarray:
        """Binary [N, C] label matrix using the fitted per-class thresholds."""
        self._check_fitted()
        probs = self.predict_proba(X)
        return predict_labels(probs, self.thresholds_)

    def predict_masks(self, X, tau: float = 0.5,
                      min_area: int | None = None) -> np.ndarray:
        """Denoised binary segmentation masks, shape [N, C, S, S]."""
        self._check_fitted()
        X = check_image_batch(X)
        seg, _ = self._forward_batches(X)
        masks = binarize(seg, tau)
        if min_area is None:
            min_area = default_min_area(self.side_)
        for n in range(masks.shape[0]):
            for c in range(masks.shape[1]):
                masks[n, c] = denoise(masks[n, c], min_area)
        return masks

    def score(self, X, y) -> float:
        """Macro F1 of predict() against a binary label matrix."""
        self._check_fitted()
        y = check_label_matrix(y)
        return f1_scores(self.predict(X), y).macro_f1
