"""Synthetic fine-grained dataset generator with ground-truth masks.

Every class shares the same smooth background texture family and differs
only by a class-specific high-contrast glyph stamped at a random location,
so telling classes apart requires finding a small discriminative region.
The glyph footprint is recorded as a binary mask, which makes saliency
quality measurable as an IoU instead of eyeballing heatmaps.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .keyval import read_keyval, write_keyval
from .kernels import upsample2x_forward


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    images_per_class: int = 50
    test_per_class: int = 10
    image_size: int = 32
    channels: int = 3
    patch_size: int = 8
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.patch_size > self.image_size:
            raise ConfigError(f"patch {self.patch_size} does not fit in image {self.image_size}")
        if self.image_size % 4:
            raise ConfigError(f"image_size must be divisible by 4, got {self.image_size}")
        if not 0 < self.test_per_class < self.images_per_class:
            raise ConfigError(
                f"test_per_class must be in (0, images_per_class), got {self.test_per_class}/{self.images_per_class}"
            )
        if self.noise < 0:
            raise ConfigError(f"noise must be non-negative, got {self.noise}")


@dataclass
class Dataset:
    images: np.ndarray  # (M, C, H, W) float64 in [0,1]
    labels: np.ndarray  # (M,) int64 class ids
    masks: np.ndarray  # (M, H, W) uint8 discriminative-region masks

    def __len__(self):
        return self.images.shape[0]

    def label_sets(self):
        return [{int(lab)} for lab in self.labels]


def _background(rng, channels, size):
    # coarse uniform grid upsampled x4: smooth, same family for every class
    coarse = rng.uniform(0.25, 0.75, size=(1, channels, size // 4, size // 4))
    return upsample2x_forward(upsample2x_forward(coarse))[0]


def _make_sample(rng, glyph, spec):
    size, patch = spec.image_size, spec.patch_size
    img = _background(rng, spec.channels, size)
    top = int(rng.integers(0, size - patch + 1))
    left = int(rng.integers(0, size - patch + 1))
    img[:, top : top + patch, left : left + patch] = glyph
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[top : top + patch, left : left + patch] = 1
    return np.clip(img, 0.0, 1.0), mask


def generate(spec):
    """Build (train, test) splits deterministically from the spec seed."""
    rng = np.random.default_rng(spec.seed)
    glyphs = []
    for _ in range(spec.n_classes):
        bits = rng.random((spec.channels, spec.patch_size, spec.patch_size)) < 0.5
        glyphs.append(np.where(bits, 0.95, 0.05))

    n_train = spec.images_per_class - spec.test_per_class
    train_imgs, train_labels, train_masks = [], [], []
    test_imgs, test_labels, test_masks = [], [], []
    for cls in range(spec.n_classes):
        for idx in range(spec.images_per_class):
            img, mask = _make_sample(rng, glyphs[cls], spec)
            if idx < n_train:
                train_imgs.append(img), train_labels.append(cls), train_masks.append(mask)
            else:
                test_imgs.append(img), test_labels.append(cls), test_masks.append(mask)

    def bundle(imgs, labels, masks):
        return Dataset(np.stack(imgs), np.array(labels, dtype=np.int64), np.stack(masks))

    return bundle(train_imgs, train_labels, train_masks), bundle(test_imgs, test_labels, test_masks)


def saliency_iou(saliency_map, gt_mask, threshold):
    """IoU between {map >= threshold} and the ground-truth region."""
    saliency_map = np.asarray(saliency_map, dtype=np.float64)
    gt_mask = np.asarray(gt_mask)
    if saliency_map.shape != gt_mask.shape:
        raise ShapeError(f"saliency_iou: map {saliency_map.shape} vs mask {gt_mask.shape}")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"saliency_iou: threshold must be in (0,1), got {threshold}")
    pred = saliency_map >= threshold
    gt = gt_mask.astype(bool)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def random_mask_iou_baseline(gt_masks, patch_size, n_samples=1000, seed=0):
    """Empirical chance IoU: same-area square masks at random positions."""
    rng = np.random.default_rng(seed)
    gt_masks = np.asarray(gt_masks)
    size = gt_masks.shape[-1]
    total = 0.0
    for _ in range(n_samples):
        gt = gt_masks[int(rng.integers(0, gt_masks.shape[0]))]
        top = int(rng.integers(0, size - patch_size + 1))
        left = int(rng.integers(0, size - patch_size + 1))
        rand = np.zeros_like(gt)
        rand[top : top + patch_size, left : left + patch_size] = 1
        total += saliency_iou(rand.astype(np.float64), gt, 0.5)
    return total / n_samples


# --- on-disk format ---------------------------------------------------------
#
# split file: count, C, H, W as u32 LE, then images (f64 LE), labels (u32 LE),
# masks (u8). The manifest is a key=value text file next to the split files.

_HEADER = struct.Struct("<IIII")


def write_split(path, ds):
    count, c, h, w = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(count, c, h, w))
        fh.write(ds.images.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<u4").tobytes())
        fh.write(ds.masks.astype("u1").tobytes())


def read_split(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated split header")
        count, c, h, w = _HEADER.unpack(head)
        body = fh.read()
    want = count * c * h * w * 8 + count * 4 + count * h * w
    if len(body) != want:
        raise FormatError(f"{path}: expected {want} payload bytes, found {len(body)}")
    off = count * c * h * w * 8
    images = np.frombuffer(body, dtype="<f8", count=count * c * h * w).reshape(count, c, h, w)
    labels = np.frombuffer(body, dtype="<u4", count=count, offset=off).astype(np.int64)
    masks = np.frombuffer(body, dtype="u1", count=count * h * w, offset=off + count * 4).reshape(count, h, w)
    return Dataset(images.astype(np.float64), labels, masks.copy())


_MANIFEST_KEYS = ("n_classes", "images_per_class", "test_per_class", "image_size", "channels", "patch_size")


def save_dataset(out_dir, spec, train, test):
    os.makedirs(out_dir, exist_ok=True)
    write_split(os.path.join(out_dir, "train.bin"), train)
    write_split(os.path.join(out_dir, "test.bin"), test)
    items = [(key, getattr(spec, key)) for key in _MANIFEST_KEYS]
    items += [
        ("noise", float(spec.noise)),
        ("seed", spec.seed),
        ("train_file", "train.bin"),
        ("test_file", "test.bin"),
        ("train_count", len(train)),
        ("test_count", len(test)),
    ]
    manifest = os.path.join(out_dir, "manifest.txt")
    write_keyval(manifest, items, header="salhash dataset manifest")
    return manifest


def load_dataset(manifest_path):
    """Returns (manifest dict, train Dataset, test Dataset)."""
    meta = read_keyval(manifest_path)
    for key in (*_MANIFEST_KEYS, "train_file", "test_file"):
        if key not in meta:
            raise FormatError(f"{manifest_path}: manifest missing key {key!r}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    train = read_split(os.path.join(base, meta["train_file"]))
    test = read_split(os.path.join(base, meta["test_file"]))
    return meta, train, test
