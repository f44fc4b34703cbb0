"""The twin-headed U-Net: encoder/decoder segmentation plus a classification
branch that fuses appearance features (encoder bottleneck) with structural
features (computed from the predicted masks).

Parameters live in a plain dict keyed by dotted path; insertion order is the
canonical iteration order, used by the optimizer and the checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError, ShapeError

CHECKPOINT_MAGIC = b"TUNC"
CHECKPOINT_VERSION = 1
INPUT_CHANNELS = 4


@dataclass
class TUNetConfig:
    side: int = 64
    n_classes: int = 4
    levels: int = 4
    base_width: int = 16
    dropout: float = 0.25

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.side % (1 << self.levels) != 0:
            raise ValueError(f"side {self.side} must be divisible by 2^levels "
                             f"= {1 << self.levels}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def width(self, level: int) -> int:
        return self.base_width << level


@dataclass
class ForwardOutput:
    seg_probs: Tensor   # [N, C, S, S] in (0, 1)
    cls_probs: Tensor   # [N, C] in (0, 1)
    seg_logits: Tensor
    cls_logits: Tensor


def _strided_out(size: int) -> int:
    # 3x3 conv, stride 2, padding 1
    return (size - 1) // 2 + 1


def structural_depth(config: TUNetConfig) -> int:
    """Number of stride-2 convs that bring the mask maps down to the spatial
    size of the appearance features."""
    target = _strided_out(config.side >> config.levels)
    size = config.side
    depth = 0
    while size > target:
        size = _strided_out(size)
        depth += 1
    return depth


def _layer_specs(config: TUNetConfig) -> list[tuple[str, tuple[int, ...], bool]]:
    """(name, weight shape, has_bias) for every layer, in canonical order."""
    w0, levels, c = config.base_width, config.levels, config.n_classes
    specs: list[tuple[str, tuple[int, ...], bool]] = []
    in_ch = INPUT_CHANNELS
    for level in range(levels):
        out_ch = config.width(level)
        specs.append((f"enc{level}.conv1", (out_ch, in_ch, 3, 3), True))
        specs.append((f"enc{level}.conv2", (out_ch, out_ch, 3, 3), True))
        in_ch = out_ch
    bottleneck = config.width(levels)
    specs.append(("bottleneck.conv1", (bottleneck, in_ch, 3, 3), True))
    specs.append(("bottleneck.conv2", (bottleneck, bottleneck, 3, 3), True))
    in_ch = bottleneck
    for level in reversed(range(levels)):
        out_ch = config.width(level)
        # transposed conv kernels are laid out [c_in, c_out, kh, kw]
        specs.append((f"dec{level}.up", (in_ch, out_ch, 2, 2), False))
        specs.append((f"dec{level}.conv1", (out_ch, 2 * out_ch, 3, 3), True))
        specs.append((f"dec{level}.conv2", (out_ch, out_ch, 3, 3), True))
        in_ch = out_ch
    specs.append(("seg_head", (c, w0, 1, 1), True))
    specs.append(("appearance.conv", (bottleneck, bottleneck, 3, 3), True))
    specs.append(("structural.conv0", (w0, c, 3, 3), True))
    for j in range(structural_depth(config)):
        specs.append((f"structural.conv{j + 1}", (w0, w0, 3, 3), True))
    specs.append(("head", (bottleneck + w0, c), True))
    return specs


def init_params(config: TUNetConfig, seed: int = 0) -> dict[str, Tensor]:
    """He fan-in scaled weights, zero biases; deterministic under the seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, has_bias in _layer_specs(config):
        if name == "head":
            fan_in = shape[0]
            bias_len = shape[1]
        elif name.endswith(".up"):
            fan_in = shape[0] * shape[2] * shape[3]
            bias_len = 0
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            bias_len = shape[0]
        std = np.sqrt(2.0 / fan_in)
        weight = Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)
        params[f"{name}.weight"] = weight
        if has_bias:
            params[f"{name}.bias"] = Tensor(np.zeros(bias_len), requires_grad=True)
    return params


def param_count(config: TUNetConfig) -> int:
    return sum(t.data.size for t in init_params(config, seed=0).values())


def _conv(params, name: str, x: Tensor, stride=(1, 1), padding=(1, 1)) -> Tensor:
    return ag.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"],
                     stride=stride, padding=padding)


def forward(params: dict[str, Tensor], config: TUNetConfig, batch,
            training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardOutput:
    """Run the full network on an [N, 4, S, S] batch.

    Dropout fires only when ``training`` is true and needs ``rng``.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4 or x.shape[1] != INPUT_CHANNELS:
        raise ShapeError(f"input: expected [N, {INPUT_CHANNELS}, S, S], got {x.shape}")
    if x.shape[2] != config.side or x.shape[3] != config.side:
        raise ShapeError(f"input: spatial dims {x.shape[2]}x{x.shape[3]} do not match "
                         f"configured side {config.side}")

    skips: list[Tensor] = []
    h = x
    for level in range(config.levels):
        h = _conv(params, f"enc{level}.conv1", h).relu()
        h = _conv(params, f"enc{level}.conv2", h).relu()
        skips.append(h)
        h = ag.maxpool2d(h)
    h = _conv(params, "bottleneck.conv1", h).relu()
    bottleneck = _conv(params, "bottleneck.conv2", h).relu()

    h = bottleneck
    for level in reversed(range(config.levels)):
        h = ag.conv2d_transpose(h, params[f"dec{level}.up.weight"], stride=(2, 2))
        skip = skips[level]
        if h.shape[2:] != skip.shape[2:]:
            raise ShapeError(f"dec{level}.up: upsampled size {h.shape[2:]} does not match "
                             f"skip connection {skip.shape[2:]}")
        h = ag.concat_channels(h, skip)
        h = _conv(params, f"dec{level}.conv1", h).relu()
        h = _conv(params, f"dec{level}.conv2", h).relu()
    seg_logits = _conv(params, "seg_head", h, padding=(0, 0))
    seg_probs = seg_logits.sigmoid()

    appearance = _conv(params, "appearance.conv", bottleneck, stride=(2, 2)).relu()
    structural = _conv(params, "structural.conv0", seg_probs).relu()
    for j in range(structural_depth(config)):
        structural = _conv(params, f"structural.conv{j + 1}", structural,
                           stride=(2, 2)).relu()
    if structural.shape[2:] != appearance.shape[2:]:
        raise ShapeError(f"structural stack: final size {structural.shape[2:]} does not "
                         f"match appearance features {appearance.shape[2:]}")
    fused = ag.concat_channels(appearance, structural)
    fused = ag.dropout(fused, config.dropout, training, rng)
    pooled = ag.global_avg_pool(fused)
    pooled = ag.dropout(pooled, config.dropout, training, rng)
    cls_logits = ag.dense(pooled, params["head.weight"], params["head.bias"])
    cls_probs = cls_logits.sigmoid()
    return ForwardOutput(seg_probs=seg_probs, cls_probs=cls_probs,
                         seg_logits=seg_logits, cls_logits=cls_logits)


def copy_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    out = {}
    for name, tensor in params.items():
        clone = Tensor(tensor.data.copy(), requires_grad=tensor.requires_grad)
        out[name] = clone
    return out


# -- checkpoint format -----------------------------------------------------------

def save_checkpoint(path, params: dict[str, Tensor],
                    config: TUNetConfig | None = None) -> None:
    """Binary checkpoint; the config is written alongside as key=value text."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            shape = tensor.data.shape
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    if config is not None:
        cfg_path = path.with_suffix(".cfg")
        with open(cfg_path, "w") as fh:
            fh.write(f"side = {config.side}\n")
            fh.write(f"classes = {config.n_classes}\n")
            fh.write(f"levels = {config.levels}\n")
            fh.write(f"base_width = {config.base_width}\n")
            fh.write(f"dropout = {config.dropout}\n")


def _read_exact(fh, n: int, path, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DataError(f"{path}: truncated checkpoint while reading {what}")
    return raw


def load_checkpoint(path) -> tuple[dict[str, Tensor], TUNetConfig | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, path, "header"))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, path, "name length"))
            name = _read_exact(fh, name_len, path, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, path, f"{name} rank"))
            shape = struct.unpack(f"<{rank}I",
                                  _read_exact(fh, 4 * rank, path, f"{name} shape"))
            n_items = int(np.prod(shape)) if rank else 1
            raw = fh.read(4 * n_items)
            if len(raw) != 4 * n_items:
                raise DataError(f"{path}: truncated data for parameter {name}")
            data = np.frombuffer(raw, dtype="<f4").reshape(shape)
            params[name] = Tensor(data.copy(), requires_grad=True)
    config = None
    cfg_path = path.with_suffix(".cfg")
    if cfg_path.exists():
        values: dict[str, str] = {}
        for line in cfg_path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        config = TUNetConfig(side=int(values["side"]),
                             n_classes=int(values["classes"]),
                             levels=int(values["levels"]),
                             base_width=int(values["base_width"]),
                             dropout=float(values["dropout"]))
    return params, config
