"""Pure-numpy implementations of the hot kernels.

These are the fallback path when numba is unavailable or when
``SALHASH_BACKEND=numpy`` is set. Results match the numba kernels to
floating-point rounding (summation order differs for conv2d).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kh, kw, stride, pad):
    """(N,C,H,W) -> sliding windows (N,C,Ho,Wo,kh,kw) after zero padding."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride, pad):
    win = _windows(x, w.shape[2], w.shape[3], stride, pad)
    out = np.einsum("nchwij,fcij->nfhw", win, w, optimize=True)
    return out + b[:, None, None]


def conv2d_backward(x, w, stride, pad, dout):
    f, c, kh, kw = w.shape
    win = _windows(x, kh, kw, stride, pad)
    dw = np.einsum("nchwij,nfhw->fcij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))

    n, _, h, wd = x.shape
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for ki in range(kh):
        for kj in range(kw):
            # each kernel tap scatters onto a strided slice of the padded input
            dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += np.einsum(
                "nfhw,fc->nchw", dout, w[:, :, ki, kj], optimize=True
            )
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dw, db


def maxpool2d_forward(x, size):
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    # (n,c,ho,wo,size*size) with the window flattened in row-major order so
    # argmax resolves ties to the first index
    win = x.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2d_backward(arg, x_shape, size, dout):
    n, c, h, w = x_shape
    ho, wo = h // size, w // size
    dwin = np.zeros((n, c, ho, wo, size * size))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def hamming_matrix(a, b):
    """All-pairs bit distances between packed code rows.

    a: (Na, W) uint64, b: (Nb, W) uint64 -> (Na, Nb) int64.
    """
    x = a[:, None, :] ^ b[None, :, :]
    return np.bitwise_count(x).sum(axis=-1, dtype=np.int64)


_interp_cache = {}


def _interp_matrix(n):
    """Row-interpolation matrix for x2 bilinear upsampling (edge replicate)."""
    m = _interp_cache.get(n)
    if m is None:
        m = np.zeros((2 * n, n))
        for i in range(2 * n):
            src = (i + 0.5) / 2.0 - 0.5
            i0 = int(np.floor(src))
            t = src - i0
            m[i, min(max(i0, 0), n - 1)] += 1.0 - t
            m[i, min(max(i0 + 1, 0), n - 1)] += t
        _interp_cache[n] = m
    return m


def upsample2x_forward(x):
    # score maps are tiny; a dense matrix product is exact and deterministic
    r = _interp_matrix(x.shape[2])
    c = _interp_matrix(x.shape[3])
    return np.einsum("ih,nchw,jw->ncij", r, x, c, optimize=True)


def upsample2x_backward(x_shape, dout):
    r = _interp_matrix(x_shape[2])
    c = _interp_matrix(x_shape[3])
    return np.einsum("ih,ncij,jw->nchw", r, dout, c, optimize=True)
