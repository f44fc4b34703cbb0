"""Dataset representation, target-mask generation, synthetic data, and stats.

A sample is a 4-channel fluorescence image (red=microtubules, green=protein,
blue=nucleus, yellow=ER) with a set of class labels. Ground-truth masks come
from thresholding the green channel: every labeled class receives the green
mask, absent classes stay black.

On-disk layout of a dataset directory:
  <id>.tunt      one binary tensor file per sample
  labels.csv     header Id,Target; Target is space-separated class indices
  manifest.csv   header Id,Path
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

IMAGE_MAGIC = b"TUNT"
IMAGE_VERSION = 1
IMAGE_CHANNELS = 4

# Dihedral group elements 0..7: rotation by 90*k degrees, then a horizontal
# flip for elements >= 4.
D4_ELEMENTS = range(8)


@dataclass
class Sample:
    id: str
    image: np.ndarray  # [4, H, W] float32 in [0, 1]
    labels: frozenset[int]


@dataclass
class DatasetManifest:
    ids: list[str]
    n_classes: int
    side: int
    labels: dict[str, frozenset[int]]
    paths: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)


def make_target_masks(sample: Sample, n_classes: int,
                      green_threshold: float = 0.5) -> np.ndarray:
    """Per-class binary masks [C, H, W]: labeled classes get the thresholded
    green channel, absent classes are all zero."""
    if not 0.0 < green_threshold < 1.0:
        raise ValueError(f"green_threshold must be in (0, 1), got {green_threshold}")
    _, h, w = sample.image.shape
    green = sample.image[1]
    masks = np.zeros((n_classes, h, w), dtype=np.float32)
    green_mask = (green >= green_threshold).astype(np.float32)
    for c in sample.labels:
        masks[c] = green_mask
    return masks


# -- synthetic dataset ---------------------------------------------------------

# Each class deposits a characteristic green pattern: blob count, blob radius,
# an intensity band, and a position prior around a class-specific anchor.
_COUNTS = (1, 3, 5)
_RADII = (0.16, 0.07, 0.045)
_INTENSITY = (0.95, 0.87, 0.79, 0.71)


def class_pattern_params(c: int, side: int) -> tuple[int, float, float]:
    """(blob count, blob radius in pixels, peak intensity) for class c."""
    count = _COUNTS[c % len(_COUNTS)]
    radius = max(2.0, _RADII[(c // len(_COUNTS)) % len(_RADII)] * side)
    intensity = _INTENSITY[c % len(_INTENSITY)]
    return count, radius, intensity


def _class_anchor(c: int, n_classes: int, side: int) -> tuple[float, float]:
    angle = 2.0 * math.pi * c / max(n_classes, 1)
    cy = side / 2.0 + 0.26 * side * math.sin(angle)
    cx = side / 2.0 + 0.26 * side * math.cos(angle)
    return cy, cx


def _paint_disks(canvas: np.ndarray, centers, radius: float, value: float) -> None:
    side = canvas.shape[0]
    yy, xx = np.mgrid[0:side, 0:side]
    for cy, cx in centers:
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        np.maximum(canvas, value * inside, out=canvas)


def draw_label_set(rng: np.random.Generator, n_classes: int,
                   imbalance: float) -> frozenset[int]:
    """Draw 1-3 distinct labels; class c has prior weight (c+1)^-imbalance."""
    weights = (np.arange(1, n_classes + 1, dtype=np.float64)) ** (-imbalance)
    k = rng.choice([1, 2, 3], p=[0.55, 0.35, 0.10])
    k = min(k, n_classes)
    chosen: list[int] = []
    available = list(range(n_classes))
    w = weights.copy()
    for _ in range(k):
        p = w[available] / w[available].sum()
        pick = rng.choice(len(available), p=p)
        chosen.append(available.pop(pick))
    return frozenset(chosen)


def generate_sample(sample_id: str, rng: np.random.Generator, n_classes: int,
                    side: int, imbalance: float = 1.5) -> Sample:
    labels = draw_label_set(rng, n_classes, imbalance)
    image = np.zeros((IMAGE_CHANNELS, side, side), dtype=np.float32)

    # Green: one characteristic pattern per present class.
    green = np.zeros((side, side), dtype=np.float32)
    for c in sorted(labels):
        count, radius, intensity = class_pattern_params(c, side)
        ay, ax = _class_anchor(c, n_classes, side)
        jitter = 0.10 * side
        centers = [(ay + rng.normal(0, jitter), ax + rng.normal(0, jitter))
                   for _ in range(count)]
        _paint_disks(green, centers, radius, intensity)

    # Landmarks are class-independent structure: a nucleus blob (blue),
    # a few microtubule streaks (red), smooth ER texture (yellow).
    nucleus = np.zeros((side, side), dtype=np.float32)
    _paint_disks(nucleus, [(side / 2 + rng.normal(0, 0.05 * side),
                            side / 2 + rng.normal(0, 0.05 * side))],
                 0.2 * side, 0.8)
    red = np.zeros((side, side), dtype=np.float32)
    yy, xx = np.mgrid[0:side, 0:side]
    for _ in range(3):
        theta = rng.uniform(0, math.pi)
        offset = rng.uniform(-0.3, 0.3) * side
        dist = np.abs((yy - side / 2) * math.cos(theta)
                      - (xx - side / 2) * math.sin(theta) - offset)
        np.maximum(red, 0.6 * (dist < 1.2), out=red)
    yellow = np.zeros((side, side), dtype=np.float32)
    for _ in range(3):
        cy, cx = rng.uniform(0, side, size=2)
        sigma = rng.uniform(0.1, 0.25) * side
        bump = 0.4 * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2)))
        yellow += bump.astype(np.float32)

    noise = rng.normal(0.0, 0.03, size=(IMAGE_CHANNELS, side, side)).astype(np.float32)
    image[0] = red
    image[1] = green
    image[2] = nucleus
    image[3] = yellow
    image = np.clip(image + 0.05 + noise, 0.0, 1.0)
    return Sample(id=sample_id, image=image, labels=labels)


def generate_samples(n: int, n_classes: int, side: int, seed: int,
                     imbalance: float = 1.5) -> list[Sample]:
    if n < 1 or n_classes < 2 or side < 16:
        raise ValueError(f"need n >= 1, classes >= 2, side >= 16; "
                         f"got n={n}, classes={n_classes}, side={side}")
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        samples.append(generate_sample(f"sample_{i:05d}", rng, n_classes, side, imbalance))
    return samples


def synth_dataset(out_dir, n: int, n_classes: int, side: int, seed: int,
                  imbalance: float = 1.5) -> DatasetManifest:
    """Generate a synthetic dataset and write it to ``out_dir``."""
    samples = generate_samples(n, n_classes, side, seed, imbalance)
    return write_dataset(samples, out_dir, n_classes)


# -- file formats --------------------------------------------------------------

def write_image_file(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != IMAGE_CHANNELS:
        raise ShapeError(f"expected a [4, H, W] image, got {image.shape}")
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<IIII", IMAGE_VERSION, IMAGE_CHANNELS, h, w))
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_image_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != IMAGE_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {IMAGE_MAGIC!r}")
        version, channels, h, w = struct.unpack("<IIII", fh.read(16))
        if version != IMAGE_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        if channels != IMAGE_CHANNELS:
            raise DataError(f"{path}: expected {IMAGE_CHANNELS} channels, got {channels}")
        raw = fh.read(channels * h * w * 4)
        if len(raw) != channels * h * w * 4:
            raise DataError(f"{path}: truncated image data")
        return np.frombuffer(raw, dtype="<f4").reshape(channels, h, w).astype(np.float32)


def _format_target(labels) -> str:
    return " ".join(str(c) for c in sorted(labels))


def _parse_target(text: str, line_no: int) -> frozenset[int]:
    text = text.strip()
    if not text:
        return frozenset()
    try:
        return frozenset(int(tok) for tok in text.split())
    except ValueError as exc:
        raise DataError(f"labels.csv line {line_no}: bad Target {text!r}") from exc


def write_dataset(samples: list[Sample], out_dir, n_classes: int) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}
    for sample in samples:
        rel = f"{sample.id}.tunt"
        write_image_file(out / rel, sample.image)
        paths[sample.id] = rel
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Id", "Target"])
        for sample in samples:
            writer.writerow([sample.id, _format_target(sample.labels)])
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Id", "Path"])
        for sample in samples:
            writer.writerow([sample.id, paths[sample.id]])
    side = samples[0].image.shape[1]
    return DatasetManifest(
        ids=[s.id for s in samples],
        n_classes=n_classes,
        side=side,
        labels={s.id: s.labels for s in samples},
        paths=paths,
    )


def load_manifest(data_dir, n_classes: int | None = None) -> DatasetManifest:
    """Read manifest.csv + labels.csv; infers the class count from the labels
    unless given explicitly."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.csv"
    labels_path = data_dir / "labels.csv"
    if not manifest_path.exists():
        raise DataError(f"missing manifest: {manifest_path}")
    if not labels_path.exists():
        raise DataError(f"missing labels: {labels_path}")

    ids: list[str] = []
    paths: dict[str, str] = {}
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["Id", "Path"]:
            raise DataError(f"{manifest_path} line 1: expected header Id,Path, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"{manifest_path} line {line_no}: expected 2 columns")
            ids.append(row[0])
            paths[row[0]] = row[1]

    labels: dict[str, frozenset[int]] = {}
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["Id", "Target"]:
            raise DataError(f"{labels_path} line 1: expected header Id,Target, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"{labels_path} line {line_no}: expected 2 columns")
            labels[row[0]] = _parse_target(row[1], line_no)

    missing = [i for i in ids if i not in labels]
    if missing:
        raise DataError(f"labels.csv is missing ids: {missing[:5]}")
    if n_classes is None:
        observed = [c for s in labels.values() for c in s]
        n_classes = max(observed) + 1 if observed else 2
    first = read_image_file(data_dir / paths[ids[0]]) if ids else None
    side = first.shape[1] if first is not None else 0
    return DatasetManifest(ids=ids, n_classes=n_classes, side=side,
                           labels=labels, paths=paths)


def load_samples(data_dir, manifest: DatasetManifest) -> list[Sample]:
    data_dir = Path(data_dir)
    return [Sample(id=i,
                   image=read_image_file(data_dir / manifest.paths[i]),
                   labels=manifest.labels[i])
            for i in manifest.ids]


# -- augmentation ----------------------------------------------------------------

def apply_dihedral(image: np.ndarray, element: int) -> np.ndarray:
    """Apply one of the 8 square symmetries to the trailing two axes."""
    if not 0 <= element < 8:
        raise ValueError(f"dihedral element must be 0..7, got {element}")
    out = np.rot90(image, k=element % 4, axes=(-2, -1))
    if element >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def transform_image(image: np.ndarray, element: int, a: float, b: float) -> np.ndarray:
    """Dihedral transform followed by lighting x -> clamp(a*x + b, 0, 1)."""
    out = apply_dihedral(image, element)
    return np.clip(a * out + np.float32(b), 0.0, 1.0).astype(np.float32)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random dihedral transform plus lighting jitter; labels are unchanged."""
    _, h, w = sample.image.shape
    if h != w:
        raise ShapeError(f"augment needs a square image, got {h}x{w}")
    element = int(rng.integers(8))
    a = float(rng.uniform(0.8, 1.2))
    b = float(rng.uniform(-0.05, 0.05))
    return Sample(id=sample.id,
                  image=transform_image(sample.image, element, a, b),
                  labels=sample.labels)


# -- splitting and statistics -----------------------------------------------------

def split(ids: list[str], val_fraction: float = 0.10,
          rng_seed: int = 0) -> tuple[list[str], list[str]]:
    """Disjoint, exhaustive train/val id split; floor(n * fraction) ids go to
    validation. Reproducible under the seed."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(ids)
    n_val = int(n * val_fraction)
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = [ids[i] for i in range(n) if i not in val_idx]
    val = [ids[i] for i in range(n) if i in val_idx]
    return train, val


@dataclass
class DatasetStats:
    frequency: np.ndarray      # [C] samples containing each class
    histogram: dict[int, int]  # labels-per-image -> count
    cooccurrence: np.ndarray   # [C, C], symmetric, diagonal == frequency


def stats(manifest: DatasetManifest) -> DatasetStats:
    if not manifest.ids:
        raise DataError("stats needs a nonempty manifest")
    c = manifest.n_classes
    multi_hot = np.zeros((len(manifest.ids), c), dtype=np.int64)
    for row, sample_id in enumerate(manifest.ids):
        for label in manifest.labels[sample_id]:
            multi_hot[row, label] = 1
    frequency = multi_hot.sum(axis=0)
    cooc = multi_hot.T @ multi_hot
    counts = multi_hot.sum(axis=1)
    histogram = {int(k): int(v) for k, v in zip(*np.unique(counts, return_counts=True))}
    return DatasetStats(frequency=frequency, histogram=histogram, cooccurrence=cooc)


def write_stats(result: DatasetStats, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "freq.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "count"])
        for c, count in enumerate(result.frequency):
            writer.writerow([c, int(count)])
    with open(out / "hist.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "count"])
        for k in sorted(result.histogram):
            writer.writerow([k, result.histogram[k]])
    with open(out / "cooc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in result.cooccurrence:
            writer.writerow([int(v) for v in row])
