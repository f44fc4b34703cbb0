"""tunet: joint segmentation + multi-label classification for fluorescence
microscopy images, built on a small reverse-mode autodiff engine."""

from .autograd import Tensor, get_precision, grad_check, precision, set_precision
from .data import (Sample, augment, generate_samples, load_manifest,
                   load_samples, make_target_masks, read_image_file, split,
                   stats, synth_dataset, write_image_file)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .estimator import TUNetClassifier
from .losses import (LossConfig, dice, dice_loss, f1_scores, focal_loss,
                     joint_loss)
from .model import (TUNetConfig, forward, init_params, load_checkpoint,
                    param_count, save_checkpoint)
from .postprocess import (binarize, denoise, fit_thresholds, load_thresholds,
                          predict_labels, save_thresholds)
from .train import (Adam, LRFindResult, TrainConfig, TrainResult, cosine_lr,
                    evaluate, lr_find, lr_schedule, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "ConfigError", "DataError", "LRFindResult", "LossConfig",
    "NumericError", "Sample", "ShapeError", "Tensor", "TrainConfig",
    "TrainResult", "TUNetClassifier", "TUNetConfig", "augment", "binarize",
    "cosine_lr", "denoise", "dice", "dice_loss", "evaluate", "f1_scores",
    "fit_thresholds", "focal_loss", "forward", "generate_samples",
    "get_precision", "grad_check", "init_params", "joint_loss",
    "load_checkpoint", "load_manifest", "load_samples", "load_thresholds",
    "lr_find", "lr_schedule", "make_target_masks", "param_count", "precision",
    "predict_labels", "read_image_file", "save_checkpoint", "save_thresholds",
    "set_precision", "split", "stats", "synth_dataset", "train",
    "write_image_file",
]
