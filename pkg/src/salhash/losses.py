"""Pairwise semantic, saliency, and quantization losses, plus the two
per-network composite objectives.

Pair conventions: a mini-batch of n codes yields all unordered pairs i<j;
every pairwise loss is the mean over that set, and per-sample losses are
means over the batch, so loss weights keep their meaning across batch sizes.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class LossWeights:
    semantic: float  # weighting of both semantic terms in the objectives
    saliency: float  # weighting of the quadruple hinge term
    margin: float

    def __post_init__(self):
        if self.semantic <= 0 or self.saliency <= 0 or self.margin <= 0:
            raise ConfigError(
                f"loss weights must be positive: semantic={self.semantic}, "
                f"saliency={self.saliency}, margin={self.margin}"
            )


@dataclass
class PairwiseLabelBatch:
    """0/1 similarity matrix over a batch; S_ij = 1 iff label sets intersect."""

    s: np.ndarray
    pairs: tuple = field(init=False)

    def __post_init__(self):
        n = self.s.shape[0]
        self.pairs = np.triu_indices(n, k=1)

    @property
    def n_pairs(self):
        return len(self.pairs[0])


def as_label_set(label):
    if isinstance(label, (set, frozenset)):
        out = frozenset(int(v) for v in label)
    elif isinstance(label, (list, tuple, np.ndarray)):
        out = frozenset(int(v) for v in label)
    else:
        out = frozenset((int(label),))
    if not out:
        raise ValueError("every image needs at least one label")
    return out


def pairwise_labels(labels):
    """Build the batch similarity matrix from per-image label sets.

    Single labels and multi-label sets both work; two images are similar
    when their label sets share at least one element.
    """
    sets = [as_label_set(lab) for lab in labels]
    n = len(sets)
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if sets[i] & sets[j]:
                s[i, j] = s[j, i] = 1.0
    return PairwiseLabelBatch(s)


def pair_estimate(mu_i, mu_j, bits):
    """Linear transform of the code inner product into (0,1): (mu_i.mu_j + k)/(2k)."""
    mu_i = mu_i if isinstance(mu_i, Tensor) else Tensor(mu_i)
    mu_j = mu_j if isinstance(mu_j, Tensor) else Tensor(mu_j)
    if mu_i.shape != (bits,) or mu_j.shape != (bits,):
        raise ShapeError(f"pair_estimate: expected two ({bits},) vectors, got {mu_i.shape} and {mu_j.shape}")
    return (ad.inner_product(mu_i, mu_j) + float(bits)) * (1.0 / (2.0 * bits))


def pair_distance(mu_i, mu_j, s_ij, bits):
    """Squared deviation between the pairwise label and its estimate."""
    return ad.square(float(s_ij) - pair_estimate(mu_i, mu_j, bits))


def _pair_deviation_matrix(mu, batch):
    """(S - (mu mu^T + k)/(2k))^2 for all pairs at once."""
    bits = mu.shape[1]
    gram = ad.matmul(mu, ad.transpose(mu))
    est = (gram + float(bits)) * (1.0 / (2.0 * bits))
    return ad.square(Tensor(batch.s) - est)


def _pair_mean(matrix, batch):
    if batch.n_pairs == 0:
        raise ShapeError("pairwise loss over an empty pair set (batch of fewer than 2 images)")
    mask = np.zeros_like(batch.s)
    mask[batch.pairs] = 1.0
    return ad.reduce_sum(ad.mul(matrix, Tensor(mask))) * (1.0 / batch.n_pairs)


def semantic_loss(mu, batch):
    """Mean squared deviation between pairwise labels and code-pair estimates."""
    _check_codes("semantic_loss", mu, batch)
    return _pair_mean(_pair_deviation_matrix(mu, batch), batch)


def saliency_loss(mu_ori, mu_sal, batch, margin):
    """Quadruple hinge: mean over pairs of max(m - d_ij + d'_ij, 0).

    d comes from original-image codes, d' from saliency-image codes;
    gradients flow through both.
    """
    if margin <= 0:
        raise ConfigError(f"saliency_loss: margin must be positive, got {margin}")
    _check_codes("saliency_loss", mu_ori, batch)
    _check_codes("saliency_loss", mu_sal, batch)
    d_ori = _pair_deviation_matrix(mu_ori, batch)
    d_sal = _pair_deviation_matrix(mu_sal, batch)
    return _pair_mean(ad.hinge(ad.sub(d_sal, d_ori) + float(margin)), batch)


def quantization_loss(mu, targets):
    """Mean over samples of the L1 gap to fixed binary targets."""
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != mu.shape:
        raise ShapeError(f"quantization_loss: codes {mu.shape} vs targets {targets.shape}")
    if not np.all(np.abs(targets) == 1.0):
        raise ValueError("quantization_loss: targets must be +1/-1")
    n = mu.shape[0] if mu.data.ndim > 1 else 1
    return ad.reduce_sum(ad.abs_(mu - Tensor(targets))) * (1.0 / n)


def binarize(mu):
    """sign(mu) with sign(0) = +1, as float64 +/-1."""
    data = mu.data if isinstance(mu, Tensor) else np.asarray(mu, dtype=np.float64)
    return np.where(data >= 0.0, 1.0, -1.0)


def _check_codes(op, mu, batch):
    if mu.data.ndim != 2:
        raise ShapeError(f"{op}: expected (n, k) codes, got {mu.shape}")
    if mu.shape[0] != batch.s.shape[0]:
        raise ShapeError(f"{op}: {mu.shape[0]} codes vs {batch.s.shape[0]} labels")


def hashing_objective(mu_ori, mu_sal, batch, b_ori, b_sal, weights):
    """Hashing-net loss: weighted semantic terms on both branches plus the
    unweighted quantization terms. Returns (scalar tensor, component floats)."""
    sem_ori = semantic_loss(mu_ori, batch)
    sem_sal = semantic_loss(mu_sal, batch)
    quant_ori = quantization_loss(mu_ori, b_ori)
    quant_sal = quantization_loss(mu_sal, b_sal)
    total = weights.semantic * (sem_ori + sem_sal) + quant_ori + quant_sal
    parts = {
        "sem_ori": sem_ori.item(),
        "sem_sal": sem_sal.item(),
        "quant_ori": quant_ori.item(),
        "quant_sal": quant_sal.item(),
        "total": total.item(),
    }
    return total, parts


def attention_objective(mu_ori, mu_sal, batch, b_sal, weights):
    """Attention-net loss: weighted quadruple hinge plus weighted semantic and
    unweighted quantization terms on the saliency branch."""
    sal = saliency_loss(mu_ori, mu_sal, batch, weights.margin)
    sem_sal = semantic_loss(mu_sal, batch)
    quant_sal = quantization_loss(mu_sal, b_sal)
    total = weights.saliency * sal + weights.semantic * sem_sal + quant_sal
    parts = {
        "sal": sal.item(),
        "sem_sal": sem_sal.item(),
        "quant_sal": quant_sal.item(),
        "total": total.item(),
    }
    return total, parts
