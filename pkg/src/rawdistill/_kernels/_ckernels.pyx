# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Loop orders mirror the numpy versions so both backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


def im2col(const float[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t ncol = c * kh * kw
    out_arr = np.empty((n * ho * wo, ncol), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t b, oi, oj, ch, ki, kj, row, col, ii, jj
    with nogil:
        for b in range(n):
            for oi in range(ho):
                for oj in range(wo):
                    row = (b * ho + oi) * wo + oj
                    col = 0
                    for ch in range(c):
                        for ki in range(kh):
                            ii = oi * stride + ki - pad
                            for kj in range(kw):
                                jj = oj * stride + kj - pad
                                if 0 <= ii < h and 0 <= jj < w:
                                    out[row, col] = x[b, ch, ii, jj]
                                else:
                                    out[row, col] = 0.0
                                col += 1
    return out_arr


def col2im(const float[:, ::1] rows, int n, int c, int h, int w,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oi, oj, ch, ki, kj, row, col, ii, jj
    # per input pixel, contributions arrive in row-major (ki, kj) order
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        col = (ch * kh + ki) * kw + kj
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            for oj in range(wo):
                                jj = oj * stride + kj - pad
                                if jj < 0 or jj >= w:
                                    continue
                                row = (b * ho + oi) * wo + oj
                                out[b, ch, ii, jj] = out[b, ch, ii, jj] + rows[row, col]
    return out_arr


def maxpool2_forward(const float[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out_arr = np.empty((n, c, ho, wo), dtype=np.float32)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int8)
    cdef float[:, :, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, i, j
    cdef float best, v
    cdef cnp.int8_t k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[b, ch, 2 * i, 2 * j]
                        k = 0
                        v = x[b, ch, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[b, ch, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            k = 2
                        v = x[b, ch, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[b, ch, i, j] = best
                        idx[b, ch, i, j] = k
    return out_arr, idx_arr


def maxpool2_backward(const float[:, :, :, ::1] gout, const cnp.int8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gin_arr = np.zeros((n, c, 2 * ho, 2 * wo), dtype=np.float32)
    cdef float[:, :, :, ::1] gin = gin_arr
    cdef Py_ssize_t b, ch, i, j
    cdef int k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        k = idx[b, ch, i, j]
                        gin[b, ch, 2 * i + k // 2, 2 * j + k % 2] = gout[b, ch, i, j]
    return gin_arr


cdef inline int _channel(Py_ssize_t i, Py_ssize_t j) nogil:
    if i % 2 == 0:
        return 0 if j % 2 == 0 else 1
    return 1 if j % 2 == 0 else 2


def bilinear_fill(const float[:, ::1] mosaic):
    cdef Py_ssize_t h = mosaic.shape[0], w = mosaic.shape[1]
    out_arr = np.empty((3, h, w), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, di, dj, ii, jj
    cdef int ch, own
    cdef double total, count
    with nogil:
        for ch in range(3):
            for i in range(h):
                for j in range(w):
                    own = _channel(i, j)
                    if own == ch:
                        out[ch, i, j] = mosaic[i, j]
                        continue
                    total = 0.0
                    count = 0.0
                    for di in range(-1, 2):
                        ii = i + di
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(-1, 2):
                            jj = j + dj
                            if jj < 0 or jj >= w:
                                continue
                            if _channel(ii, jj) == ch:
                                total = total + mosaic[ii, jj]
                                count = count + 1.0
                    out[ch, i, j] = <float>(total / count)
    return out_arr
