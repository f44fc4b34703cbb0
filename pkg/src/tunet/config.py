"""Flat key=value run configuration.

Files hold one ``key = value`` pair per line; blank lines and ``#`` comments
are ignored. Unknown keys are an error, not a warning. Command-line flags
override file values, which override defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .errors import ConfigError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class Field:
    name: str
    kind: type          # bool, int, float, or str
    default: Any
    help: str = ""


# Every tunable shared by the train and lr-find commands.
TRAIN_FIELDS: tuple[Field, ...] = (
    Field("levels", int, 3, "encoder/decoder depth"),
    Field("base_width", int, 8, "channels at the top level"),
    Field("dropout", float, 0.25, "dropout rate in the classification branch"),
    Field("alpha", float, 0.4, "segmentation share of the joint loss"),
    Field("gamma", float, 2.0, "focal loss exponent"),
    Field("dice_epsilon", float, 1.0, "dice smoothing constant"),
    Field("batch_size", int, 8, "mini-batch size"),
    Field("max_epochs", int, 50, "epoch budget"),
    Field("patience", int, 5, "epochs without val-loss improvement before stopping"),
    Field("initial_lr", float, 0.005, "peak learning rate"),
    Field("lr_min", float, -1.0, "cosine floor; negative means initial_lr/100"),
    Field("cycle_len", int, 10, "cosine restart period in epochs"),
    Field("val_fraction", float, 0.1, "validation split fraction"),
    Field("augment", bool, True, "apply dihedral + lighting augmentation"),
    Field("green_threshold", float, 0.5, "mask binarization level on the green plane"),
    Field("target_val_f1", float, -1.0, "stop early at this val F1; negative disables"),
    Field("seed", int, 0, "run seed"),
)


def schema_by_name(fields: tuple[Field, ...]) -> dict[str, Field]:
    return {f.name: f for f in fields}


def parse_value(field: Field, text: str) -> Any:
    text = text.strip()
    if field.kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{field.name}: expected a boolean, got {text!r}")
    try:
        return field.kind(text)
    except ValueError:
        raise ConfigError(f"{field.name}: expected {field.kind.__name__}, "
                          f"got {text!r}") from None


def read_config_file(path, fields: tuple[Field, ...]) -> dict[str, Any]:
    schema = schema_by_name(fields)
    values: dict[str, Any] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in schema:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = parse_value(schema[key], text)
    return values


def resolve(fields: tuple[Field, ...], file_values: dict[str, Any],
            flag_values: dict[str, Any]) -> dict[str, Any]:
    """Apply precedence: flag > file > default."""
    out = {f.name: f.default for f in fields}
    out.update(file_values)
    out.update({k: v for k, v in flag_values.items() if v is not None})
    return out
