"""Attention and hashing networks plus the saliency-image pipeline.

Desk-scale stand-ins for the usual large backbones: the attention net is a
three-stage conv encoder with a two-scale skip fusion head that emits one
score per pixel at input resolution; the hashing net is a three-stage conv
encoder followed by two affine layers whose final layer has `bits` linear
outputs (no squashing, so code magnitudes are driven by the losses alone).
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ShapeError

NORM_EPS = 1e-12


def _fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv_param(rng, name, c_out, c_in, k):
    w = Parameter(f"{name}.w", _fan_in_uniform(rng, (c_out, c_in, k, k), c_in * k * k))
    b = Parameter(f"{name}.b", np.zeros(c_out))
    return w, b


def _linear_param(rng, name, c_out, c_in):
    w = Parameter(f"{name}.w", _fan_in_uniform(rng, (c_out, c_in), c_in))
    b = Parameter(f"{name}.b", np.zeros(c_out))
    return w, b


class AttentionNet:
    """Dense per-pixel scorer: 3 conv+pool stages, skip fusion after stage 2.

    The coarse head (stride 8) is upsampled x2 and fused with a skip head on
    the stage-2 features (stride 4); the fused map is upsampled back to input
    resolution, giving a raw (unnormalized) score map of shape (N,1,H,W).
    """

    def __init__(self, in_shape=(3, 32, 32), widths=(8, 16, 32), rng=None):
        c, h, w = in_shape
        if h % 8 or w % 8:
            raise ShapeError(f"AttentionNet: input {h}x{w} not divisible by total pool stride 8")
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_shape = tuple(in_shape)
        self.widths = tuple(widths)
        w0, w1, w2 = widths
        self.conv1_w, self.conv1_b = _conv_param(rng, "att.conv1", w0, c, 3)
        self.conv2_w, self.conv2_b = _conv_param(rng, "att.conv2", w1, w0, 3)
        self.conv3_w, self.conv3_b = _conv_param(rng, "att.conv3", w2, w1, 3)
        self.coarse_w, self.coarse_b = _conv_param(rng, "att.coarse", 1, w2, 1)
        self.skip_w, self.skip_b = _conv_param(rng, "att.skip", 1, w1, 1)

    def parameters(self):
        return [
            self.conv1_w, self.conv1_b,
            self.conv2_w, self.conv2_b,
            self.conv3_w, self.conv3_b,
            self.coarse_w, self.coarse_b,
            self.skip_w, self.skip_b,
        ]

    def forward(self, x):
        x = _as_batch(x, self.in_shape, "AttentionNet")
        s1 = ad.max_pool2d(ad.relu(ad.conv2d(x, self.conv1_w.tensor, self.conv1_b.tensor, pad=1)), 2)
        s2 = ad.max_pool2d(ad.relu(ad.conv2d(s1, self.conv2_w.tensor, self.conv2_b.tensor, pad=1)), 2)
        s3 = ad.max_pool2d(ad.relu(ad.conv2d(s2, self.conv3_w.tensor, self.conv3_b.tensor, pad=1)), 2)
        coarse = ad.conv2d(s3, self.coarse_w.tensor, self.coarse_b.tensor)
        skip = ad.conv2d(s2, self.skip_w.tensor, self.skip_b.tensor)
        fused = ad.add(ad.bilinear_upsample2x(coarse), skip)
        return ad.bilinear_upsample2x(ad.bilinear_upsample2x(fused))


class HashNet:
    """Conv encoder with a k-output linear hash layer (no saturating head)."""

    def __init__(self, in_shape=(3, 32, 32), bits=12, widths=(8, 16, 32), fc_width=64, pools=(2, 2, 4), rng=None):
        c, h, w = in_shape
        stride = int(np.prod(pools))
        if h % stride or w % stride:
            raise ShapeError(f"HashNet: input {h}x{w} not divisible by total pool stride {stride}")
        if bits <= 0:
            raise ShapeError(f"HashNet: bits must be positive, got {bits}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_shape = tuple(in_shape)
        self.bits = bits
        self.widths = tuple(widths)
        self.pools = tuple(pools)
        w0, w1, w2 = widths
        self.conv1_w, self.conv1_b = _conv_param(rng, "hash.conv1", w0, c, 3)
        self.conv2_w, self.conv2_b = _conv_param(rng, "hash.conv2", w1, w0, 3)
        self.conv3_w, self.conv3_b = _conv_param(rng, "hash.conv3", w2, w1, 3)
        self._flat = w2 * (h // stride) * (w // stride)
        self.fc1_w, self.fc1_b = _linear_param(rng, "hash.fc1", fc_width, self._flat)
        self.hash_w, self.hash_b = _linear_param(rng, "hash.out", bits, fc_width)

    def parameters(self):
        return [
            self.conv1_w, self.conv1_b,
            self.conv2_w, self.conv2_b,
            self.conv3_w, self.conv3_b,
            self.fc1_w, self.fc1_b,
            self.hash_w, self.hash_b,
        ]

    def forward(self, x):
        x = _as_batch(x, self.in_shape, "HashNet")
        p1, p2, p3 = self.pools
        s1 = ad.max_pool2d(ad.relu(ad.conv2d(x, self.conv1_w.tensor, self.conv1_b.tensor, pad=1)), p1)
        s2 = ad.max_pool2d(ad.relu(ad.conv2d(s1, self.conv2_w.tensor, self.conv2_b.tensor, pad=1)), p2)
        s3 = ad.max_pool2d(ad.relu(ad.conv2d(s2, self.conv3_w.tensor, self.conv3_b.tensor, pad=1)), p3)
        flat = ad.reshape(s3, (s3.shape[0], self._flat))
        hidden = ad.relu(ad.linear(flat, self.fc1_w.tensor, self.fc1_b.tensor))
        return ad.linear(hidden, self.hash_w.tensor, self.hash_b.tensor)


def _as_batch(x, in_shape, who):
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim == 3:
        x = ad.reshape(x, (1,) + x.data.shape)
    if x.data.ndim != 4 or x.data.shape[1:] != tuple(in_shape):
        raise ShapeError(f"{who}: expected input shaped {in_shape}, got {tuple(x.data.shape[1:])}")
    return x


def normalize_saliency(raw):
    """Rescale a raw score map to [0,1] per image: (raw - min)/(max - min + eps).

    A constant map normalizes to all zeros (the numerator vanishes while the
    guarded denominator stays positive).
    """
    if not isinstance(raw, Tensor):
        raw = Tensor(raw)
    if raw.data.ndim == 2:
        lo = ad.reduce_min(raw)
        hi = ad.reduce_max(raw)
    elif raw.data.ndim == 4:
        lo = ad.reduce_min(raw, axes=(1, 2, 3), keepdims=True)
        hi = ad.reduce_max(raw, axes=(1, 2, 3), keepdims=True)
    else:
        raise ShapeError(f"normalize_saliency: expected (H,W) or (N,1,H,W), got {raw.data.shape}")
    return ad.div(ad.sub(raw, lo), ad.add(ad.sub(hi, lo), NORM_EPS))


def apply_saliency(mask, x):
    """Reweight an image pixelwise, one shared mask across channels."""
    if not isinstance(mask, Tensor):
        mask = Tensor(mask)
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if mask.data.shape[-2:] != x.data.shape[-2:]:
        raise ShapeError(f"apply_saliency: mask {mask.data.shape} vs image {x.data.shape}")
    return ad.mul(mask, x)


def saliency_image(attention_net, x):
    """Full pipeline: raw map -> normalized mask -> reweighted image."""
    raw = attention_net.forward(x)
    mask = normalize_saliency(raw)
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim == 3:
        x = ad.reshape(x, (1,) + x.data.shape)
    return apply_saliency(mask, x)


def build_networks(in_shape, bits, seed, with_attention=True):
    """Construct both nets from one seeded generator (fixed draw order)."""
    rng = np.random.default_rng(seed)
    attention = AttentionNet(in_shape, rng=rng) if with_attention else None
    hashing = HashNet(in_shape, bits=bits, rng=rng)
    return attention, hashing
