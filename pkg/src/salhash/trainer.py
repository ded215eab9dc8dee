"""Alternating optimization of the attention and hashing networks.

Each epoch: recompute the binary targets from the current networks, run one
pass of attention updates (saliency branch backpropagates through the frozen
hashing net), then one pass of hashing updates (the saliency image enters as
a constant, so attention parameters are untouched). The attention network
trains first; the first ``attention_warmup_epochs`` epochs skip the hashing
update entirely (its objective is still evaluated so the history stays
complete).
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import networks
from .autodiff import Tape, Tensor, backward, frozen, sgd_step
from .errors import ConfigError
from .losses import (
    LossWeights,
    PairwiseLabelBatch,
    attention_objective,
    binarize,
    hashing_objective,
    pairwise_labels,
    quantization_loss,
    semantic_loss,
)

HISTORY_FIELDS = ("epoch", "sem_ori", "sem_sal", "sal", "quant", "total_attention", "total_hashing")


@dataclass
class TrainConfig:
    bits: int = 12
    semantic_weight: float = 30.0
    saliency_weight: float = 40.0
    margin: float = 0.0  # 0 means the default k/4
    batch_size: int = 32
    epochs: int = 30
    lr_attention: float = 0.01
    lr_hashing: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.5
    attention_warmup_epochs: int = 1
    use_attention: bool = True
    seed: int = 0
    input_size: tuple = (3, 32, 32)

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        if self.bits <= 0:
            raise ConfigError(f"bits must be positive, got {self.bits}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2 (pairs must exist), got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.lr_attention <= 0 or self.lr_hashing <= 0:
            raise ConfigError("learning rates must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be non-negative")
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative (0 = default k/4), got {self.margin}")
        if self.attention_warmup_epochs < 0:
            raise ConfigError(f"attention_warmup_epochs must be non-negative, got {self.attention_warmup_epochs}")
        if len(self.input_size) != 3:
            raise ConfigError(f"input_size must be (C, H, W), got {self.input_size}")

    @property
    def resolved_margin(self):
        return self.margin if self.margin > 0 else self.bits / 4.0

    @property
    def loss_weights(self):
        return LossWeights(self.semantic_weight, self.saliency_weight, self.resolved_margin)


@dataclass
class TrainState:
    images: np.ndarray
    label_batch: PairwiseLabelBatch
    attention_net: object
    hash_net: object
    rng: np.random.Generator
    b_ori: np.ndarray = None
    b_sal: np.ndarray = None
    mu_ori: np.ndarray = None  # real original-image codes from the targets pass
    history: list = field(default_factory=list)
    epoch: int = 0


def _forward_codes(images, attention_net, hash_net, batch_size):
    mu_ori, mu_sal = [], []
    for start in range(0, images.shape[0], batch_size):
        x = Tensor(images[start : start + batch_size])
        mu_ori.append(hash_net.forward(x).data)
        if attention_net is not None:
            mu_sal.append(hash_net.forward(networks.saliency_image(attention_net, x)).data)
    return np.concatenate(mu_ori), np.concatenate(mu_sal) if attention_net is not None else None


def compute_binary_targets(images, attention_net, hash_net, batch_size=64):
    """Per-epoch sign targets: sign(Hash(x)) and sign(Hash(saliency image))."""
    mu_ori, mu_sal = _forward_codes(images, attention_net, hash_net, batch_size)
    return binarize(mu_ori), None if mu_sal is None else binarize(mu_sal)


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if idx.size >= 2:  # a lone trailing image has no pairs
            yield idx
        else:
            break


def _sub_batch(state, idx):
    return (
        state.images[idx],
        PairwiseLabelBatch(state.label_batch.s[np.ix_(idx, idx)]),
        None if state.b_ori is None else state.b_ori[idx],
        None if state.b_sal is None else state.b_sal[idx],
    )


def _check_finite(total, which, epoch):
    if not math.isfinite(total):
        raise RuntimeError(f"non-finite {which} objective at epoch {epoch}: {total}")


def train_attention_epoch(state, cfg, lr):
    """One shuffled pass updating only the attention parameters."""
    if state.b_sal is None:
        raise RuntimeError("binary targets not computed for this epoch")
    weights = cfg.loss_weights
    sums, count = {}, 0
    for idx in _batches(state.rng, state.images.shape[0], cfg.batch_size):
        x_np, s_batch, _, b_sal = _sub_batch(state, idx)
        with frozen(state.hash_net.parameters()):
            with Tape():
                x = Tensor(x_np)
                mu_sal = state.hash_net.forward(networks.saliency_image(state.attention_net, x))
                mu_ori = state.hash_net.forward(x)  # nothing here requires grad: constant branch
                total, parts = attention_objective(mu_ori, mu_sal, s_batch, b_sal, weights)
                _check_finite(parts["total"], "attention", state.epoch)
                backward(total)
            sgd_step(state.attention_net.parameters(), lr, cfg.momentum, cfg.weight_decay)
        for key, val in parts.items():
            sums[key] = sums.get(key, 0.0) + val * idx.size
        count += idx.size
    return {key: val / count for key, val in sums.items()}


def train_hashing_epoch(state, cfg, lr, update=True):
    """One shuffled pass updating only the hashing parameters.

    With ``update=False`` (warm-up epochs) the objective is evaluated and
    averaged but no gradients are taken and no parameter moves.
    """
    if state.b_ori is None:
        raise RuntimeError("binary targets not computed for this epoch")
    weights = cfg.loss_weights
    sums, count = {}, 0
    for idx in _batches(state.rng, state.images.shape[0], cfg.batch_size):
        x_np, s_batch, b_ori, b_sal = _sub_batch(state, idx)
        x = Tensor(x_np)
        y_const = None
        if state.attention_net is not None:
            y_const = Tensor(networks.saliency_image(state.attention_net, x).data)  # constant input
        if update:
            with Tape():
                total, parts = _hashing_batch_loss(state, x, y_const, s_batch, b_ori, b_sal, weights)
                _check_finite(parts["total"], "hashing", state.epoch)
                backward(total)
            sgd_step(state.hash_net.parameters(), lr, cfg.momentum, cfg.weight_decay)
        else:
            _, parts = _hashing_batch_loss(state, x, y_const, s_batch, b_ori, b_sal, weights)
            _check_finite(parts["total"], "hashing", state.epoch)
        for key, val in parts.items():
            sums[key] = sums.get(key, 0.0) + val * idx.size
        count += idx.size
    return {key: val / count for key, val in sums.items()}


def _hashing_batch_loss(state, x, y_const, s_batch, b_ori, b_sal, weights):
    mu_ori = state.hash_net.forward(x)
    if y_const is not None:
        mu_sal = state.hash_net.forward(y_const)
        return hashing_objective(mu_ori, mu_sal, s_batch, b_ori, b_sal, weights)
    # no-attention ablation: semantic + quantization on raw-image codes only
    sem_ori = semantic_loss(mu_ori, s_batch)
    quant_ori = quantization_loss(mu_ori, b_ori)
    total = weights.semantic * sem_ori + quant_ori
    parts = {
        "sem_ori": sem_ori.item(),
        "sem_sal": math.nan,
        "quant_ori": quant_ori.item(),
        "quant_sal": 0.0,
        "total": total.item(),
    }
    return total, parts


def _lr_at(base, epoch, every, factor):
    if every <= 0:
        return base
    return base * factor ** ((epoch - 1) // every)


def alternating_train(images, labels, cfg, attention_net=None, hash_net=None):
    """Run the full alternating schedule; returns the final TrainState.

    ``attention_net`` / ``hash_net`` override the default architectures
    (useful for analytic toy networks in tests).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ConfigError(f"expected a non-empty (N, C, H, W) image array, got {images.shape}")
    seq = np.random.SeedSequence(cfg.seed)
    init_seq, shuffle_seq = seq.spawn(2)
    if hash_net is None:
        built_attention, hash_net = networks.build_networks(
            cfg.input_size, cfg.bits, init_seq, with_attention=cfg.use_attention
        )
        if attention_net is None:
            attention_net = built_attention
    elif attention_net is None and cfg.use_attention:
        attention_net, _ = networks.build_networks(cfg.input_size, cfg.bits, init_seq, with_attention=True)
    if not cfg.use_attention:
        attention_net = None

    state = TrainState(
        images=images,
        label_batch=pairwise_labels(labels),
        attention_net=attention_net,
        hash_net=hash_net,
        rng=np.random.default_rng(shuffle_seq),
    )
    for t in range(1, cfg.epochs + 1):
        state.epoch = t
        state.b_ori, state.b_sal = compute_binary_targets(images, attention_net, hash_net, cfg.batch_size)
        row = {"epoch": t, "sem_ori": math.nan, "sem_sal": math.nan, "sal": math.nan,
               "quant": math.nan, "total_attention": math.nan, "total_hashing": math.nan}
        if attention_net is not None:
            att = train_attention_epoch(state, cfg, _lr_at(cfg.lr_attention, t, cfg.lr_decay_every, cfg.lr_decay_factor))
            row.update(sem_sal=att["sem_sal"], sal=att["sal"], total_attention=att["total"])
        update_hash = attention_net is None or t > cfg.attention_warmup_epochs
        hsh = train_hashing_epoch(
            state, cfg, _lr_at(cfg.lr_hashing, t, cfg.lr_decay_every, cfg.lr_decay_factor), update=update_hash
        )
        row.update(sem_ori=hsh["sem_ori"], quant=hsh["quant_ori"] + hsh["quant_sal"], total_hashing=hsh["total"])
        state.history.append(row)
    return state


def save_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({key: row[key] for key in HISTORY_FIELDS})


def load_history(path):
    with open(path, "r", newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            row = {"epoch": int(raw["epoch"])}
            row.update({key: float(raw[key]) for key in HISTORY_FIELDS if key != "epoch"})
            rows.append(row)
        return rows
