"""Command-line entry point.

Subcommands: synth, stats, train, lr-find, predict, eval.
Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import TRAIN_FIELDS, Field, parse_value, read_config_file, resolve
from .data import (load_manifest, load_samples, make_target_masks, split,
                   stats, synth_dataset, write_stats)
from .errors import ConfigError, DataError, NumericError
from .losses import dice, f1_scores, write_metrics_csv
from .model import TUNetConfig, forward, init_params, load_checkpoint, save_checkpoint
from .postprocess import (binarize, default_min_area, denoise, fit_thresholds,
                          load_thresholds, predict_labels, save_thresholds)
from .train import (TrainConfig, evaluate, lr_find, train, write_lr_curve,
                    write_trainlog)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for data
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for field in TRAIN_FIELDS:
        flag = "--" + field.name.replace("_", "-")
        if field.kind is bool:
            parser.add_argument(flag, default=None, metavar="BOOL",
                                type=lambda text, f=field: parse_value(f, text),
                                help=field.help)
        else:
            parser.add_argument(flag, default=None, type=field.kind,
                                help=field.help)


def _gather_flag_values(args) -> dict:
    return {f.name: getattr(args, f.name) for f in TRAIN_FIELDS}


def _resolved_config(args) -> dict:
    file_values = read_config_file(args.config, TRAIN_FIELDS) if args.config else {}
    return resolve(TRAIN_FIELDS, file_values, _gather_flag_values(args))


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        patience=cfg["patience"], initial_lr=cfg["initial_lr"],
        cycle_len=cfg["cycle_len"],
        lr_min=None if cfg["lr_min"] < 0 else cfg["lr_min"],
        alpha=cfg["alpha"], gamma=cfg["gamma"], dice_epsilon=cfg["dice_epsilon"],
        green_threshold=cfg["green_threshold"], augment=cfg["augment"],
        seed=cfg["seed"],
        target_val_f1=None if cfg["target_val_f1"] < 0 else cfg["target_val_f1"])


def _load_split(args, cfg: dict):
    manifest = load_manifest(args.data, getattr(args, "classes", None))
    samples = load_samples(args.data, manifest)
    by_id = {s.id: s for s in samples}
    train_ids, val_ids = split(manifest.ids, cfg["val_fraction"], rng_seed=cfg["seed"])
    if not val_ids:
        raise DataError(f"dataset of {len(manifest.ids)} samples leaves an empty "
                        f"validation split at val_fraction={cfg['val_fraction']}")
    return (manifest, [by_id[i] for i in train_ids], [by_id[i] for i in val_ids])


def cmd_synth(args) -> int:
    synth_dataset(args.out, n=args.n, n_classes=args.classes, side=args.side,
                  seed=args.seed, imbalance=args.imbalance)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest(args.data)
    out_dir = args.out if args.out else args.data
    write_stats(stats(manifest), out_dir)
    print(f"wrote freq.csv, hist.csv, cooc.csv to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    manifest, train_samples, val_samples = _load_split(args, cfg)
    model_config = TUNetConfig(side=manifest.side, n_classes=manifest.n_classes,
                               levels=cfg["levels"], base_width=cfg["base_width"],
                               dropout=cfg["dropout"])
    model_config.validate()
    tc = _train_config(cfg)
    params = init_params(model_config, seed=cfg["seed"])
    result = train(params, model_config, train_samples, val_samples, tc)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "best.tunc", result.best_params, model_config)
    save_checkpoint(out / "last.tunc", result.last_params, model_config)
    write_trainlog(out / "trainlog.csv", result.log)

    val_loss, _, val_probs = evaluate(result.best_params, model_config,
                                      val_samples, tc)
    val_truth = np.stack([
        np.isin(np.arange(manifest.n_classes), list(s.labels)).astype(np.float32)
        for s in val_samples])
    thresholds = fit_thresholds(val_probs, val_truth)
    save_thresholds(out / "thresholds.csv", thresholds)
    report = f1_scores(predict_labels(val_probs, thresholds), val_truth)
    write_metrics_csv(report, out / "metrics.csv")
    print(f"best epoch {result.best_epoch}: val_loss={val_loss:.6f} "
          f"val_f1_macro={report.macro_f1:.4f}")
    return 0


def cmd_lr_find(args) -> int:
    cfg = _resolved_config(args)
    manifest, train_samples, _ = _load_split(args, cfg)
    model_config = TUNetConfig(side=manifest.side, n_classes=manifest.n_classes,
                               levels=cfg["levels"], base_width=cfg["base_width"],
                               dropout=cfg["dropout"])
    model_config.validate()
    tc = _train_config(cfg)
    params = init_params(model_config, seed=cfg["seed"])
    result = lr_find(params, model_config, train_samples, tc,
                     lr_min=args.sweep_min, lr_max=args.sweep_max,
                     steps=args.steps)
    write_lr_curve(Path(args.out) if args.out else Path("lrcurve.csv"), result)
    print(result.suggested_lr)
    return 0


def _load_compatible(args, manifest):
    params, config = load_checkpoint(args.checkpoint)
    if config is None:
        raise DataError(f"{args.checkpoint}: missing sidecar .cfg with the "
                        f"architecture settings")
    if config.n_classes != manifest.n_classes or config.side != manifest.side:
        raise DataError(
            f"checkpoint expects {config.n_classes} classes at side "
            f"{config.side}, dataset has {manifest.n_classes} classes at side "
            f"{manifest.side}")
    return params, config


def _predict_probs(params, config, samples, batch_size=16):
    seg, cls = [], []
    for start in range(0, len(samples), batch_size):
        batch = np.stack([s.image for s in samples[start:start + batch_size]])
        out = forward(params, config, batch, training=False)
        seg.append(out.seg_probs.data)
        cls.append(out.cls_probs.data)
    return np.concatenate(seg), np.concatenate(cls)


def cmd_predict(args) -> int:
    manifest = load_manifest(args.data)
    params, config = _load_compatible(args, manifest)
    thresholds = load_thresholds(args.thresholds)
    if thresholds.shape[0] != config.n_classes:
        raise DataError(f"thresholds file has {thresholds.shape[0]} classes, "
                        f"checkpoint has {config.n_classes}")
    samples = load_samples(args.data, manifest)
    _, cls_probs = _predict_probs(params, config, samples)
    pred = predict_labels(cls_probs, thresholds, force_argmax=args.force_argmax)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Id", "Predicted"])
        for sample, row in zip(samples, pred):
            writer.writerow([sample.id,
                             " ".join(str(c) for c in np.flatnonzero(row))])
    print(f"wrote predictions for {len(samples)} samples to {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.data)
    params, config = _load_compatible(args, manifest)
    thresholds = load_thresholds(args.thresholds)
    if thresholds.shape[0] != config.n_classes:
        raise DataError(f"thresholds file has {thresholds.shape[0]} classes, "
                        f"checkpoint has {config.n_classes}")
    samples = load_samples(args.data, manifest)
    seg_probs, cls_probs = _predict_probs(params, config, samples)
    truth = np.stack([
        np.isin(np.arange(config.n_classes), list(s.labels)).astype(np.float32)
        for s in samples])
    report = f1_scores(predict_labels(cls_probs, thresholds), truth)

    min_area = default_min_area(config.side)
    masks = binarize(seg_probs, args.tau)
    per_class = np.zeros(config.n_classes)
    for i, sample in enumerate(samples):
        target = make_target_masks(sample, config.n_classes)
        for c in range(config.n_classes):
            cleaned = denoise(masks[i, c], min_area)
            per_class[c] += dice(cleaned, target[c])
    per_class /= len(samples)

    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out_dir / "metrics.csv")
    with open(out_dir / "dice.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "dice"])
        for c in range(config.n_classes):
            writer.writerow([c, per_class[c]])
        writer.writerow(["mean", per_class.mean()])
    print(f"macro_f1={report.macro_f1:.4f} micro_f1={report.micro_f1:.4f} "
          f"mean_dice={per_class.mean():.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tunet",
                     description="Multi-label protein localization with a "
                                 "joint segmentation/classification network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--imbalance", type=float, default=1.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="label frequency / histogram / co-occurrence")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="output directory (default: --data)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--classes", type=int, default=None,
                   help="class count override (default: inferred from labels)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("lr-find", help="learning-rate range sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--out", default=None, help="curve CSV path (default lrcurve.csv)")
    p.add_argument("--sweep-min", type=float, default=1e-5)
    p.add_argument("--sweep-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=60)
    _add_config_flags(p)
    p.set_defaults(func=cmd_lr_find)

    p = sub.add_parser("predict", help="write label predictions for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force-argmax", action="store_true",
                   help="fill empty prediction rows with the top class")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a checkpoint against labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--out", default=None, help="report directory (default: cwd)")
    p.add_argument("--tau", type=float, default=0.5, help="mask binarization level")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"tunet: data error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"tunet: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"tunet: i/o error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"tunet: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
