"""Typed view over the flat key=value run config used by the CLI.

One file can hold data-generation, training, and evaluation keys together;
each command picks what it needs. Unknown keys are rejected up front.
"""

from .data import SyntheticSpec
from .errors import ConfigError
from .keyval import read_keyval
from .trainer import TrainConfig


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    return tuple(int(part) for part in text.split(",") if part.strip())


_KEY_TYPES = {
    # training
    "bits": int,
    "semantic_weight": float,
    "saliency_weight": float,
    "margin": float,
    "batch_size": int,
    "epochs": int,
    "lr_attention": float,
    "lr_hashing": float,
    "momentum": float,
    "weight_decay": float,
    "lr_decay_every": int,
    "lr_decay_factor": float,
    "attention_warmup_epochs": int,
    "use_attention": _parse_bool,
    "seed": int,
    # synthetic data
    "n_classes": int,
    "images_per_class": int,
    "test_per_class": int,
    "image_size": int,
    "channels": int,
    "patch_size": int,
    "noise": float,
    # evaluation
    "map_cutoff": int,
    "precision_cutoffs": _parse_int_list,
    "iou_threshold": float,
}

_TRAIN_KEYS = (
    "bits", "semantic_weight", "saliency_weight", "margin", "batch_size", "epochs",
    "lr_attention", "lr_hashing", "momentum", "weight_decay", "lr_decay_every",
    "lr_decay_factor", "attention_warmup_epochs", "use_attention", "seed",
)
_DATA_KEYS = ("n_classes", "images_per_class", "test_per_class", "image_size", "channels", "patch_size", "noise", "seed")


def load_run_config(path):
    """Parse and type-check a config file; None means an empty config."""
    if path is None:
        return {}
    raw = read_keyval(path)
    parsed = {}
    for key, text in raw.items():
        if key not in _KEY_TYPES:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        try:
            parsed[key] = _KEY_TYPES[key](text)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
    return parsed


def _subset(cfg, keys, overrides):
    out = {key: cfg[key] for key in keys if key in cfg}
    for key, value in overrides.items():
        if value is not None:
            out[key] = value
    return out


def train_config_from(cfg, input_size, **overrides):
    return TrainConfig(input_size=input_size, **_subset(cfg, _TRAIN_KEYS, overrides))


def synthetic_spec_from(cfg, **overrides):
    return SyntheticSpec(**_subset(cfg, _DATA_KEYS, overrides))
