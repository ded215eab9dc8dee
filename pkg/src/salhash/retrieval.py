"""Packed binary codes, Hamming ranking, and the retrieval metrics.

Bit convention: +1 -> 1, -1 -> 0, little-endian within 64-bit words, so a
code row occupies ceil(k/64) uint64 words with zero padding bits. Ranking
sorts by ascending Hamming distance with ties broken by database insertion
index (stable sort), which keeps every evaluation deterministic.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels, losses, networks
from .autodiff import Tensor
from .errors import FormatError, ShapeError

CODE_MAGIC = b"DSAH"
CODE_VERSION = 1


def pack_codes(codes):
    """(N, k) +/-1 codes -> (N, ceil(k/64)) uint64 rows."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ShapeError(f"pack_codes: expected (N, k), got {codes.shape}")
    if not np.all(np.abs(codes) == 1):
        raise ValueError("pack_codes: entries must be +1/-1")
    n, k = codes.shape
    bits = (codes > 0).astype(np.uint64)
    n_words = (k + 63) // 64
    packed = np.zeros((n, n_words), dtype=np.uint64)
    for word in range(n_words):
        chunk = bits[:, 64 * word : min(64 * (word + 1), k)]
        weights = np.uint64(1) << np.arange(chunk.shape[1], dtype=np.uint64)
        packed[:, word] = (chunk * weights).sum(axis=1, dtype=np.uint64)
    return packed


def unpack_codes(packed, bits):
    """(N, W) uint64 rows -> (N, bits) float64 +/-1."""
    packed = np.asarray(packed, dtype=np.uint64)
    n = packed.shape[0]
    out = np.empty((n, bits))
    for t in range(bits):
        word, offset = divmod(t, 64)
        out[:, t] = ((packed[:, word] >> np.uint64(offset)) & np.uint64(1)).astype(np.float64)
    return 2.0 * out - 1.0


@dataclass
class BinaryCodeSet:
    """Packed k-bit codes plus per-row label sets: the retrieval database."""

    bits: int
    codes: np.ndarray  # (N, ceil(bits/64)) uint64
    labels: list  # frozenset per row

    def __post_init__(self):
        if self.codes.shape[0] != len(self.labels):
            raise ShapeError(f"{self.codes.shape[0]} code rows vs {len(self.labels)} label rows")
        if self.codes.shape[1] != (self.bits + 63) // 64:
            raise ShapeError(f"{self.codes.shape[1]} words per row does not fit {self.bits} bits")

    def __len__(self):
        return self.codes.shape[0]


def build_code_set(codes, labels):
    codes = np.asarray(codes)
    return BinaryCodeSet(codes.shape[1], pack_codes(codes), [losses.as_label_set(lab) for lab in labels])


def merge_code_sets(sets):
    sets = list(sets)
    if not sets:
        raise ValueError("merge_code_sets: nothing to merge")
    bits = sets[0].bits
    for s in sets[1:]:
        if s.bits != bits:
            raise ShapeError(f"merge_code_sets: mixed code lengths {bits} and {s.bits}")
    return BinaryCodeSet(bits, np.concatenate([s.codes for s in sets]), [lab for s in sets for lab in s.labels])


def hamming_distance(a, b):
    """Differing-bit count between two packed code rows."""
    a = np.atleast_2d(np.asarray(a, dtype=np.uint64))
    b = np.atleast_2d(np.asarray(b, dtype=np.uint64))
    if a.shape != b.shape or a.shape[0] != 1:
        raise ShapeError(f"hamming_distance: incompatible packed rows {a.shape} and {b.shape}")
    return int(kernels.hamming_matrix(a, b)[0, 0])


def hamming_distances(queries, db):
    """(Nq, Ndb) distance matrix between two code sets."""
    if queries.bits != db.bits:
        raise ShapeError(f"code length mismatch: queries {queries.bits} vs db {db.bits}")
    return kernels.hamming_matrix(queries.codes, db.codes)


@dataclass
class RankedResult:
    query_id: int
    order: np.ndarray  # db indices by ascending distance, insertion-index ties
    distances: np.ndarray  # aligned with `order`
    relevant: np.ndarray = None  # aligned 0/1 flags, when labels known


def rank(query_code, db, query_id=0, query_labels=None):
    """Full deterministic ordering of the database for one query."""
    if len(db) == 0:
        raise ValueError("rank: empty database")
    query_code = np.atleast_2d(np.asarray(query_code, dtype=np.uint64))
    if query_code.shape[1] != db.codes.shape[1]:
        raise ShapeError(f"rank: query row has {query_code.shape[1]} words, db rows have {db.codes.shape[1]}")
    dist = kernels.hamming_matrix(query_code, db.codes)[0]
    order = np.argsort(dist, kind="stable")
    relevant = None
    if query_labels is not None:
        qset = losses.as_label_set(query_labels)
        relevant = np.array([1 if qset & db.labels[i] else 0 for i in order], dtype=np.int64)
    return RankedResult(query_id, order, dist[order], relevant)


def _relevance_matrix(queries, db):
    return np.array([[1 if q & d else 0 for d in db.labels] for q in queries.labels], dtype=np.int64)


def _ranked_relevance(queries, db):
    """Per-query relevance flags in rank order, plus total-relevant counts."""
    dist = hamming_distances(queries, db)
    rel = _relevance_matrix(queries, db)
    order = np.argsort(dist, kind="stable", axis=1)
    ranked_rel = np.take_along_axis(rel, order, axis=1)
    return ranked_rel, rel.sum(axis=1), dist, order


def _warn_excluded(n_excluded, total):
    if n_excluded:
        warnings.warn(f"{n_excluded} of {total} queries have no relevant database item and were excluded")


def mean_average_precision(queries, db, cutoff=None):
    """Mean over queries of average precision along the ranked list.

    ``cutoff`` truncates the list (AP then normalizes by min(R, cutoff));
    the default evaluates the full ranking. Queries without any relevant
    database item are excluded with a warning.
    """
    ranked_rel, totals, _, _ = _ranked_relevance(queries, db)
    aps = []
    for flags, r in zip(ranked_rel, totals):
        if r == 0:
            continue
        if cutoff is not None:
            flags = flags[:cutoff]
            r = min(r, cutoff)
        hits = np.cumsum(flags)
        ranks = np.arange(1, flags.size + 1)
        aps.append(float((flags * hits / ranks).sum() / r))
    _warn_excluded(len(totals) - len(aps), len(totals))
    if not aps:
        raise ValueError("mean_average_precision: no query has a relevant database item")
    return float(np.mean(aps))


def precision_recall_curve(queries, db):
    """(radius, recall, precision) for every Hamming radius 0..k.

    Recall averages over all scoring queries; precision averages over the
    queries that retrieved anything within the radius.
    """
    ranked_rel, totals, dist, _ = _ranked_relevance(queries, db)
    keep = totals > 0
    _warn_excluded(int((~keep).sum()), len(totals))
    if not keep.any():
        raise ValueError("precision_recall_curve: no query has a relevant database item")
    rel = _relevance_matrix(queries, db)[keep]
    dist = dist[keep]
    totals = totals[keep]
    points = []
    for radius in range(db.bits + 1):
        within = dist <= radius
        retrieved = within.sum(axis=1)
        relevant = (within * rel).sum(axis=1)
        recall = float(np.mean(relevant / totals))
        scoring = retrieved > 0
        precision = float(np.mean(relevant[scoring] / retrieved[scoring])) if scoring.any() else 0.0
        points.append((radius, recall, precision))
    return points


def precision_at_cutoffs(queries, db, cutoffs):
    """Mean precision among the top-n ranked items for each cutoff n."""
    ranked_rel, totals, _, _ = _ranked_relevance(queries, db)
    keep = totals > 0
    _warn_excluded(int((~keep).sum()), len(totals))
    ranked_rel = ranked_rel[keep]
    out = []
    for n in cutoffs:
        if not 0 < n <= len(db):
            raise ValueError(f"precision cutoff {n} outside 1..{len(db)}")
        out.append((n, float(np.mean(ranked_rel[:, :n].sum(axis=1) / n))))
    return out


# --- encoding ---------------------------------------------------------------


def encode(image, attention_net, hash_net):
    """One image -> k-bit +/-1 code: sign of the hash of its saliency image.

    With ``attention_net=None`` the raw image is hashed directly (the
    no-attention ablation path).
    """
    return encode_dataset(np.asarray(image)[None], attention_net, hash_net, batch_size=1)[0]


def encode_dataset(images, attention_net, hash_net, batch_size=64):
    """(M, C, H, W) images -> (M, k) +/-1 codes, in fixed batch order."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != hash_net.in_shape:
        raise ShapeError(f"encode: images shaped {images.shape[1:]}, model expects {hash_net.in_shape}")
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        x = Tensor(images[start : start + batch_size])
        y = networks.saliency_image(attention_net, x) if attention_net is not None else x
        chunks.append(losses.binarize(hash_net.forward(y)))
    return np.concatenate(chunks)


# --- code file format --------------------------------------------------------
#
# magic "DSAH", version u8, k u16 LE, count u64 LE, packed rows (count x
# words x u64 LE), then per row: label count u16 LE + label ids u32 LE.


def save_codes(path, code_set):
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC)
        fh.write(struct.pack("<B", CODE_VERSION))
        fh.write(struct.pack("<H", code_set.bits))
        fh.write(struct.pack("<Q", len(code_set)))
        fh.write(code_set.codes.astype("<u8").tobytes())
        for labels in code_set.labels:
            ordered = sorted(labels)
            fh.write(struct.pack("<H", len(ordered)))
            fh.write(struct.pack(f"<{len(ordered)}I", *ordered))


def load_codes(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CODE_MAGIC:
            raise FormatError(f"{path}: bad magic, not a code file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != CODE_VERSION:
            raise FormatError(f"{path}: unsupported code-file version {version}")
        (bits,) = struct.unpack("<H", fh.read(2))
        (count,) = struct.unpack("<Q", fh.read(8))
        n_words = (bits + 63) // 64
        raw = fh.read(count * n_words * 8)
        if len(raw) != count * n_words * 8:
            raise FormatError(f"{path}: truncated code rows")
        codes = np.frombuffer(raw, dtype="<u8").reshape(count, n_words).astype(np.uint64)
        labels = []
        for _ in range(count):
            head = fh.read(2)
            if len(head) != 2:
                raise FormatError(f"{path}: truncated label block")
            (n_labels,) = struct.unpack("<H", head)
            body = fh.read(4 * n_labels)
            if len(body) != 4 * n_labels:
                raise FormatError(f"{path}: truncated label row")
            labels.append(frozenset(struct.unpack(f"<{n_labels}I", body)))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after label block")
    if bits % 64:
        pad_mask = ~((np.uint64(1) << np.uint64(bits % 64)) - np.uint64(1))
        if np.any(codes[:, -1] & pad_mask):
            raise FormatError(f"{path}: nonzero padding bits beyond {bits}-bit codes")
    return BinaryCodeSet(bits, codes, labels)
