"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` producing bit-identical
results; the summation order of the scatter-add kernels is fixed so the two
backends can be swapped without changing a training trajectory.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "python"


def im2col(x, kh, kw, stride, pad):
    """Unfold an NCHW batch into rows of shape (N*Ho*Wo, C*kh*kw)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = np.ascontiguousarray(x, dtype=np.float32)
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, ho, wo, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return win.reshape(n * ho * wo, c * kh * kw)


def col2im(rows, n, c, h, w, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add rows back into an NCHW batch.

    Contributions to each input pixel are accumulated in row-major kernel
    offset order, starting from a zero buffer.
    """
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = rows.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    for ki in range(kh):
        for kj in range(kw):
            out[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    if pad:
        out = np.ascontiguousarray(out[:, :, pad:pad + h, pad:pad + w])
    return out


def maxpool2_forward(x):
    """2x2/stride-2 max pool. Returns (out, argmax index in 0..3 per window)."""
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    # np.argmax returns the first maximal element: row-major tie-breaking
    idx = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(gout, idx):
    n, c, ho, wo = gout.shape
    gwin = np.zeros((n, c, ho, wo, 4), dtype=np.float32)
    np.put_along_axis(gwin, idx[..., None].astype(np.intp), gout[..., None], axis=-1)
    gin = gwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gin.reshape(n, c, ho * 2, wo * 2))


def bilinear_fill(mosaic):
    """Fill an RGGB mosaic (H, W) to a (3, H, W) image.

    Sampled positions keep their value; a missing value is the mean of the
    same-channel samples in its in-bounds 3x3 neighbourhood.
    """
    h, w = mosaic.shape
    m = np.asarray(mosaic, dtype=np.float32)
    masks = _rggb_masks(h, w)
    out = np.empty((3, h, w), dtype=np.float32)
    for ch in range(3):
        mask = masks[ch]
        vals = np.where(mask, m, np.float32(0))
        vp = np.zeros((h + 2, w + 2), dtype=np.float64)
        cp = np.zeros((h + 2, w + 2), dtype=np.float64)
        vp[1:-1, 1:-1] = vals
        cp[1:-1, 1:-1] = mask
        # float64 sums of at most four float32 samples are exact, so a
        # constant neighbourhood averages back to exactly its value
        total = np.zeros((h, w), dtype=np.float64)
        count = np.zeros((h, w), dtype=np.float64)
        for di in range(3):
            for dj in range(3):
                total += vp[di:di + h, dj:dj + w]
                count += cp[di:di + h, dj:dj + w]
        out[ch] = np.where(mask, m, (total / count).astype(np.float32))
    return out


def _rggb_masks(h, w):
    r = np.zeros((h, w), dtype=bool)
    g = np.zeros((h, w), dtype=bool)
    b = np.zeros((h, w), dtype=bool)
    r[0::2, 0::2] = True
    g[0::2, 1::2] = True
    g[1::2, 0::2] = True
    b[1::2, 1::2] = True
    return r, g, b
