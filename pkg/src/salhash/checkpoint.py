"""Binary checkpoint format for trained parameters.

Layout (all integers little-endian):

    magic   8 bytes  b"DSAHCKPT"
    version u8       1
    C,H,W   u32 x3   input image shape
    bits    u32      hash code length k
    flags   u8       bit 0: file contains attention-net parameters
    count   u32      number of parameters
    per parameter:
        name_len u16, name utf-8, rank u8, dims u32 x rank, payload f64 LE

Parameter order is the networks' canonical iteration order, so
write -> read -> write reproduces the file byte for byte.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"DSAHCKPT"
VERSION = 1


@dataclass
class CheckpointMeta:
    channels: int
    height: int
    width: int
    bits: int
    has_attention: bool

    @property
    def input_shape(self):
        return (self.channels, self.height, self.width)


def save_checkpoint(path, meta, params):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<IIII", meta.channels, meta.height, meta.width, meta.bits))
        fh.write(struct.pack("<B", 1 if meta.has_attention else 0))
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            dims = p.tensor.data.shape
            fh.write(struct.pack("<B", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(p.tensor.data.astype("<f8").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path):
    """Returns (CheckpointMeta, ordered dict name -> float64 array)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<B", _read_exact(fh, 1, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        c, h, w, bits = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        (flags,) = struct.unpack("<B", _read_exact(fh, 1, "flags"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            n = int(np.prod(dims, dtype=np.int64)) if dims else 1
            payload = _read_exact(fh, 8 * n, f"payload of {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last parameter")
    meta = CheckpointMeta(c, h, w, bits, bool(flags & 1))
    return meta, arrays


def restore_params(params, arrays):
    """Copy stored arrays into live parameters, validating names and shapes."""
    stored = dict(arrays)
    for p in params:
        if p.name not in stored:
            raise FormatError(f"checkpoint missing parameter {p.name}")
        arr = stored.pop(p.name)
        if arr.shape != p.tensor.data.shape:
            raise ShapeError(f"checkpoint parameter {p.name}: stored {arr.shape}, model expects {p.tensor.data.shape}")
        p.tensor.data = arr.copy()
    if stored:
        raise FormatError(f"checkpoint has unexpected parameters: {sorted(stored)}")
