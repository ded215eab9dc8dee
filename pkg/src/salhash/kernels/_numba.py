"""Numba-jitted hot kernels: conv2d, max-pool, packed-code popcount.

conv2d runs as jitted im2col gather + one BLAS matmul + jitted col2im
scatter: the loops are memory-bound (numba's win) while the arithmetic
lands in dgemm. All loops are serial with a fixed order and fastmath is
off, so results are bit-reproducible run to run. Popcount works on int64
views of the packed uint64 words; the SWAR masks keep every step safe
under arithmetic shifts.
"""

import numpy as np
from numba import njit

_M1 = np.int64(0x5555555555555555)
_M2 = np.int64(0x3333333333333333)
_M4 = np.int64(0x0F0F0F0F0F0F0F0F)
_M7F = np.int64(0x7F)


@njit(cache=True)
def _im2col(x, kh, kw, stride, pad, ho, wo):
    n, c, h, wd = x.shape
    cols = np.empty((n * ho * wo, c * kh * kw))
    row = 0
    for im in range(n):
        for i in range(ho):
            ibase = i * stride - pad
            for j in range(wo):
                jbase = j * stride - pad
                t = 0
                for ci in range(c):
                    for ki in range(kh):
                        ii = ibase + ki
                        inside_i = 0 <= ii < h
                        for kj in range(kw):
                            jj = jbase + kj
                            if inside_i and 0 <= jj < wd:
                                cols[row, t] = x[im, ci, ii, jj]
                            else:
                                cols[row, t] = 0.0
                            t += 1
                row += 1
    return cols


@njit(cache=True)
def _col2im(dcols, x_shape, kh, kw, stride, pad, ho, wo):
    n, c, h, wd = x_shape
    dx = np.zeros((n, c, h, wd))
    row = 0
    for im in range(n):
        for i in range(ho):
            ibase = i * stride - pad
            for j in range(wo):
                jbase = j * stride - pad
                t = 0
                for ci in range(c):
                    for ki in range(kh):
                        ii = ibase + ki
                        inside_i = 0 <= ii < h
                        for kj in range(kw):
                            jj = jbase + kj
                            if inside_i and 0 <= jj < wd:
                                dx[im, ci, ii, jj] += dcols[row, t]
                            t += 1
                row += 1
    return dx


@njit(cache=True)
def conv2d_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad, ho, wo)
    flat = np.dot(cols, np.ascontiguousarray(w.reshape(f, c * kh * kw).T))
    out = np.empty((n, f, ho, wo))
    row = 0
    for im in range(n):
        for i in range(ho):
            for j in range(wo):
                for fo in range(f):
                    out[im, fo, i, j] = flat[row, fo] + b[fo]
                row += 1
    return out


@njit(cache=True)
def conv2d_backward(x, w, stride, pad, dout):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    dmat = np.empty((n * ho * wo, f))
    db = np.zeros(f)
    row = 0
    for im in range(n):
        for i in range(ho):
            for j in range(wo):
                for fo in range(f):
                    g = dout[im, fo, i, j]
                    dmat[row, fo] = g
                    db[fo] += g
                row += 1
    cols = _im2col(x, kh, kw, stride, pad, ho, wo)
    dw = np.dot(np.ascontiguousarray(dmat.T), cols).reshape(f, c, kh, kw)
    dcols = np.dot(dmat, np.ascontiguousarray(w.reshape(f, c * kh * kw)))
    dx = _col2im(dcols, x.shape, kh, kw, stride, pad, ho, wo)
    return dx, dw, db


@njit(cache=True)
def maxpool2d_forward(x, size):
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    out = np.empty((n, c, ho, wo))
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for im in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[im, ci, i * size, j * size]
                    bidx = 0
                    for ki in range(size):
                        for kj in range(size):
                            v = x[im, ci, i * size + ki, j * size + kj]
                            if v > best:  # strict: ties keep the first index
                                best = v
                                bidx = ki * size + kj
                    out[im, ci, i, j] = best
                    arg[im, ci, i, j] = bidx
    return out, arg


@njit(cache=True)
def maxpool2d_backward(arg, x_shape, size, dout):
    n, c, h, w = x_shape
    ho, wo = h // size, w // size
    dx = np.zeros((n, c, h, w))
    for im in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    a = arg[im, ci, i, j]
                    dx[im, ci, i * size + a // size, j * size + a % size] += dout[im, ci, i, j]
    return dx


@njit(cache=True)
def _hamming_matrix_i64(a, b):
    na, nw = a.shape
    nb = b.shape[0]
    out = np.empty((na, nb), dtype=np.int64)
    for i in range(na):
        for j in range(nb):
            tot = np.int64(0)
            for t in range(nw):
                v = a[i, t] ^ b[j, t]
                v = v - ((v >> 1) & _M1)
                v = (v & _M2) + ((v >> 2) & _M2)
                v = (v + (v >> 4)) & _M4
                v = v + (v >> 8)
                v = v + (v >> 16)
                v = v + (v >> 32)
                tot += v & _M7F
            out[i, j] = tot
    return out


def hamming_matrix(a, b):
    return _hamming_matrix_i64(a.view(np.int64), b.view(np.int64))
