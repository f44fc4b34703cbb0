"""Training loop: Adam, learning-rate finding, cosine annealing with warm
restarts, early stopping on validation loss, and run logging."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Sample, augment, make_target_masks
from .errors import NumericError, ShapeError
from .losses import dice_loss, f1_scores, focal_loss, joint_loss
from .model import ForwardOutput, TUNetConfig, copy_params, forward

# Stream tags keep the shuffle / augmentation / dropout RNGs independent.
_SHUFFLE_TAG = 101
_AUGMENT_TAG = 202
_DROPOUT_TAG = 303


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    initial_lr: float = 0.005
    cycle_len: int = 10
    lr_min: float | None = None   # defaults to initial_lr / 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.4
    gamma: float = 2.0
    dice_epsilon: float = 1.0
    green_threshold: float = 0.5
    augment: bool = True
    seed: int = 0
    # optional convergence short-circuit: stop once val F1 reaches this
    target_val_f1: float | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.initial_lr <= 0:
            raise ValueError(f"initial_lr must be > 0, got {self.initial_lr}")

    @property
    def lr_max_value(self) -> float:
        return self.initial_lr

    @property
    def lr_min_value(self) -> float:
        return self.lr_min if self.lr_min is not None else self.initial_lr / 100.0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1_macro: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    best_params: dict[str, Tensor]
    last_params: dict[str, Tensor]
    log: list[EpochRecord]
    best_epoch: int
    best_val_loss: float


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != self.m[name].shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} does not match "
                                 f"moment buffer {self.m[name].shape}")
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def cosine_lr(t: float, cycle_len: float, lr_max: float, lr_min: float) -> float:
    """Cosine curve from lr_max at t=0 down to lr_min at t=cycle_len."""
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / cycle_len))

def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Warm restarts: the cosine curve restarts from lr_max every cycle."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    t = epoch % config.cycle_len
    return cosine_lr(t, config.cycle_len, config.lr_max_value, config.lr_min_value)


def _sample_index(sample_id: str, index_of: dict[str, int]) -> int:
    return index_of[sample_id]


def _prepare_batch(samples: list[Sample], n_classes: int, config: TrainConfig,
                   epoch: int, index_of: dict[str, int],
                   do_augment: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Images, target masks, and multi-hot labels for one batch.

    Each sample gets its own RNG stream keyed by (seed, epoch, sample index),
    so results do not depend on batching or worker layout.
    """
    images, masks, labels = [], [], []
    for sample in samples:
        if do_augment:
            rng = np.random.default_rng(np.random.SeedSequence(
                [config.seed, _AUGMENT_TAG, epoch, index_of[sample.id]]))
            sample = augment(sample, rng)
        images.append(sample.image)
        masks.append(make_target_masks(sample, n_classes, config.green_threshold))
        hot = np.zeros(n_classes, dtype=np.float32)
        hot[list(sample.labels)] = 1.0
        labels.append(hot)
    return np.stack(images), np.stack(masks), np.stack(labels)


def _batch_loss(out: ForwardOutput, masks: np.ndarray, labels: np.ndarray,
                config: TrainConfig) -> Tensor:
    l_seg = dice_loss(out.seg_probs, masks, config.dice_epsilon)
    l_cls = focal_loss(out.cls_probs, labels, config.gamma)
    return joint_loss(l_seg, l_cls, config.alpha)


def evaluate(params, model_config: TUNetConfig, samples: list[Sample],
             config: TrainConfig, batch_size: int | None = None
             ) -> tuple[float, float, np.ndarray]:
    """Mean joint loss, macro F1 at the fixed 0.5 threshold, and class
    probabilities over a sample list (eval mode, no augmentation)."""
    batch_size = batch_size or config.batch_size
    index_of = {s.id: i for i, s in enumerate(samples)}
    losses, probs, truths = [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images, masks, labels = _prepare_batch(chunk, model_config.n_classes,
                                               config, 0, index_of, False)
        out = forward(params, model_config, images, training=False)
        loss = _batch_loss(out, masks, labels, config)
        losses.append(float(loss.data) * len(chunk))
        probs.append(out.cls_probs.data)
        truths.append(labels)
    probs = np.concatenate(probs)
    truths = np.concatenate(truths)
    f1 = f1_scores(probs >= 0.5, truths).macro_f1
    return sum(losses) / len(samples), f1, probs


def train(params: dict[str, Tensor], model_config: TUNetConfig,
          train_samples: list[Sample], val_samples: list[Sample],
          config: TrainConfig) -> TrainResult:
    """Optimize ``params`` in place; returns the best-validation-loss copy,
    the final state, and the per-epoch log. Raises NumericError if the train
    loss turns non-finite."""
    config.validate()
    if not train_samples or not val_samples:
        raise ValueError("train and val splits must both be nonempty")
    n_classes = model_config.n_classes
    index_of = {s.id: i for i, s in enumerate(train_samples)}
    adam = Adam(params, config.beta1, config.beta2, config.adam_eps)
    log: list[EpochRecord] = []
    best = copy_params(params)
    best_val = math.inf
    best_epoch = -1
    epochs_since_improvement = 0

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        lr = lr_schedule(epoch, config)
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(
            [config.seed, _SHUFFLE_TAG, epoch]))
        order = shuffle_rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for batch_idx, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = [train_samples[i] for i in order[start:start + config.batch_size]]
            images, masks, labels = _prepare_batch(chunk, n_classes, config,
                                                   epoch, index_of, config.augment)
            dropout_rng = np.random.default_rng(np.random.SeedSequence(
                [config.seed, _DROPOUT_TAG, epoch, batch_idx]))
            out = forward(params, model_config, images, training=True, rng=dropout_rng)
            loss = _batch_loss(out, masks, labels, config)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite train loss at epoch {epoch}, "
                                   f"batch {batch_idx}")
            epoch_loss += value * len(chunk)
            adam.zero_grad()
            loss.backward()
            adam.step(lr)
        val_loss, val_f1, _ = evaluate(params, model_config, val_samples, config)
        log.append(EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / len(train_samples),
            val_loss=val_loss,
            val_f1_macro=val_f1,
            lr=lr,
            seconds=time.perf_counter() - started,
        ))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best = copy_params(params)
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
        if config.target_val_f1 is not None and val_f1 >= config.target_val_f1:
            break
        if epochs_since_improvement >= config.patience:
            break

    return TrainResult(best_params=best, last_params=params, log=log,
                       best_epoch=best_epoch, best_val_loss=best_val)


def write_trainlog(path, log: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_f1_macro",
                         "lr", "seconds"])
        for rec in log:
            writer.writerow([rec.epoch, rec.train_loss, rec.val_loss,
                             rec.val_f1_macro, rec.lr, rec.seconds])


@dataclass
class LRFindResult:
    suggested_lr: float
    curve: list[tuple[float, float]] = field(default_factory=list)
    divergence_lr: float | None = None


def lr_find(params: dict[str, Tensor], model_config: TUNetConfig,
            samples: list[Sample], config: TrainConfig,
            lr_min: float = 1e-5, lr_max: float = 1.0, steps: int = 60,
            smooth: float = 0.98, divergence_factor: float = 4.0) -> LRFindResult:
    """Sweep the learning rate geometrically over mini-batch steps and watch
    the smoothed loss.

    The sweep stops once the smoothed loss exceeds ``divergence_factor`` times
    its running minimum (or turns non-finite); the suggested rate is the one
    at the smoothed minimum divided by 10, clamped to the sweep range.
    Mutates a throwaway copy of the parameters, not ``params``.
    """
    if steps < 20:
        raise ValueError(f"lr_find needs steps >= 20, got {steps}")
    work = copy_params(params)
    adam = Adam(work, config.beta1, config.beta2, config.adam_eps)
    n_classes = model_config.n_classes
    index_of = {s.id: i for i, s in enumerate(samples)}
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(
        [config.seed, _SHUFFLE_TAG, 0]))
    order = shuffle_rng.permutation(len(samples))
    ratio = (lr_max / lr_min) ** (1.0 / max(steps - 1, 1))

    curve: list[tuple[float, float]] = []
    smoothed = None
    running_min = math.inf
    best_lr = lr_min
    divergence_lr = None
    cursor = 0
    for step in range(steps):
        lr = lr_min * ratio ** step
        idx = [int(order[(cursor + j) % len(order)]) for j in range(config.batch_size)]
        cursor += config.batch_size
        chunk = [samples[i] for i in idx]
        images, masks, labels = _prepare_batch(chunk, n_classes, config, 0,
                                               index_of, False)
        dropout_rng = np.random.default_rng(np.random.SeedSequence(
            [config.seed, _DROPOUT_TAG, 0, step]))
        out = forward(work, model_config, images, training=True, rng=dropout_rng)
        loss = _batch_loss(out, masks, labels, config)
        value = float(loss.data)
        if not math.isfinite(value):
            divergence_lr = lr
            break
        smoothed = value if smoothed is None else smooth * smoothed + (1.0 - smooth) * value
        curve.append((lr, smoothed))
        if smoothed < running_min:
            running_min = smoothed
            best_lr = lr
        if smoothed > divergence_factor * running_min:
            divergence_lr = lr
            break
        adam.zero_grad()
        loss.backward()
        adam.step(lr)
    suggested = min(max(best_lr / 10.0, lr_min), lr_max)
    return LRFindResult(suggested_lr=suggested, curve=curve,
                        divergence_lr=divergence_lr)


def write_lr_curve(path, result: LRFindResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lr", "smoothed_loss"])
        for lr, loss in result.curve:
            writer.writerow([lr, loss])
