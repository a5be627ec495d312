"""Camera-side simulation and RAW preprocessing.

RGB images are ``(3, H, W)`` float32 arrays in [0, 1]; RAW frames are
:class:`BayerImage` objects holding an ``(H, W)`` RGGB mosaic.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .tensor import ContractError

PATTERN = "RGGB"
STD_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class BayerImage:
    values: np.ndarray
    pattern: str = PATTERN
    exposure_ratio: float = 1.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] % 2 or v.shape[1] % 2 or v.size == 0:
            raise ContractError(f"Bayer image needs even positive H, W; got shape {v.shape}")
        if self.pattern != PATTERN:
            raise ContractError(f"only the {PATTERN} pattern is supported, got {self.pattern!r}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BayerImage):
            return NotImplemented
        return (
            self.pattern == other.pattern
            and self.exposure_ratio == other.exposure_ratio
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class BayerStats:
    """Per-colour mean and population std. Both G sites share one channel.

    Also used for plain RGB channel statistics of the teacher's input.
    """

    mean_r: float
    mean_g: float
    mean_b: float
    std_r: float
    std_g: float
    std_b: float
    sample_count: int

    @property
    def means(self) -> np.ndarray:
        return np.array([self.mean_r, self.mean_g, self.mean_b], dtype=np.float32)

    @property
    def stds(self) -> np.ndarray:
        s = np.array([self.std_r, self.std_g, self.std_b], dtype=np.float64)
        return np.maximum(s, STD_EPS).astype(np.float32)


def _rgb_array(rgb) -> np.ndarray:
    arr = np.asarray(getattr(rgb, "data", rgb), dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected a 3 x H x W image, got shape {arr.shape}")
    if arr.shape[1] % 2 or arr.shape[2] % 2:
        raise ContractError(f"mosaic needs even H and W, got {arr.shape[1]} x {arr.shape[2]}")
    return arr


def channel_masks(h: int, w: int) -> tuple:
    """Boolean (R, G, B) site masks of an RGGB mosaic."""
    r = np.zeros((h, w), dtype=bool)
    g = np.zeros((h, w), dtype=bool)
    b = np.zeros((h, w), dtype=bool)
    r[0::2, 0::2] = True
    g[0::2, 1::2] = True
    g[1::2, 0::2] = True
    b[1::2, 1::2] = True
    return r, g, b


def mosaic(rgb) -> BayerImage:
    arr = _rgb_array(rgb)
    out = np.empty(arr.shape[1:], dtype=np.float32)
    out[0::2, 0::2] = arr[0, 0::2, 0::2]
    out[0::2, 1::2] = arr[1, 0::2, 1::2]
    out[1::2, 0::2] = arr[1, 1::2, 0::2]
    out[1::2, 1::2] = arr[2, 1::2, 1::2]
    return BayerImage(out)


def add_gaussian_noise(img: BayerImage, std: float, seed) -> BayerImage:
    """Additive N(0, std^2) noise from a seeded generator, clipped to [0, 1]."""
    if std < 0:
        raise ContractError(f"noise std must be non-negative, got {std}")
    if std == 0:
        return img
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(img.values.shape, dtype=np.float32) * np.float32(std)
    return replace(img, values=np.clip(img.values + noise, 0.0, 1.0))


def simulate_short_exposure(rgb, ratio: float, read_std: float, shot_scale: float, seed) -> BayerImage:
    """Scale the mosaic by ``ratio`` and add signal-dependent plus read noise.

    The per-pixel std is ``sqrt(shot_scale * signal + read_std**2)`` where
    ``signal`` is the scaled, noiseless value.
    """
    if not 0.0 < ratio <= 1.0:
        raise ContractError(f"exposure ratio must lie in (0, 1], got {ratio}")
    if read_std < 0 or shot_scale < 0:
        raise ContractError("read_std and shot_scale must be non-negative")
    signal = mosaic(rgb).values * np.float32(ratio)
    if read_std == 0 and shot_scale == 0:
        return BayerImage(signal, exposure_ratio=float(ratio))
    sigma = np.sqrt(np.float32(shot_scale) * signal + np.float32(read_std) ** 2)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(signal.shape, dtype=np.float32) * sigma
    return BayerImage(np.clip(signal + noise, 0.0, 1.0), exposure_ratio=float(ratio))


def bilinear_fill(img: BayerImage) -> np.ndarray:
    """Three-channel image from a mosaic by same-channel 3x3 neighbour averaging."""
    return _kernels.bilinear_fill(img.values)


def compute_bayer_stats(dataset: Iterable[BayerImage]) -> BayerStats:
    images = [im.values for im in dataset]
    if not images:
        raise ValueError("cannot compute Bayer statistics of an empty dataset")
    sums = np.zeros(3)
    counts = np.zeros(3, dtype=np.int64)
    for v in images:
        for ch, m in enumerate(channel_masks(*v.shape)):
            sums[ch] += v[m].sum(dtype=np.float64)
            counts[ch] += int(m.sum())
    means = sums / counts
    sq = np.zeros(3)
    for v in images:
        for ch, m in enumerate(channel_masks(*v.shape)):
            sq[ch] += ((v[m].astype(np.float64) - means[ch]) ** 2).sum()
    stds = np.sqrt(sq / counts)
    return BayerStats(*map(float, means), *map(float, stds), sample_count=len(images))


def compute_rgb_stats(images: Sequence[np.ndarray]) -> BayerStats:
    """Per-channel mean/std of clean RGB images (teacher input normalisation)."""
    if len(images) == 0:
        raise ValueError("cannot compute RGB statistics of an empty dataset")
    stack = np.asarray(images, dtype=np.float32)
    flat = stack.transpose(1, 0, 2, 3).reshape(3, -1).astype(np.float64)
    means = flat.mean(axis=1)
    stds = np.sqrt(((flat - means[:, None]) ** 2).mean(axis=1))
    return BayerStats(*map(float, means), *map(float, stds), sample_count=len(stack))


def bayer_normalize(img3, stats: BayerStats) -> np.ndarray:
    """Per-channel ``(x - mean) / max(std, eps)`` on a (3, H, W) or (N, 3, H, W) array."""
    x = np.asarray(getattr(img3, "data", img3), dtype=np.float32)
    shape = (3, 1, 1) if x.ndim == 3 else (1, 3, 1, 1)
    return (x - stats.means.reshape(shape)) / stats.stds.reshape(shape)


# -- quantisation shared by the in-memory and on-disk paths -----------------


def quantize8(x: np.ndarray) -> np.ndarray:
    """Round to the 8-bit levels a PPM/PGM file can hold."""
    q = np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    return dequantize(q, 255)


def quantize16(x: np.ndarray) -> np.ndarray:
    q = np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    return dequantize(q, 65535)


def dequantize(q: np.ndarray, maxval: int) -> np.ndarray:
    return q.astype(np.float32) / np.float32(maxval)


def _to_levels(x: np.ndarray, maxval: int, dtype) -> np.ndarray:
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * maxval).astype(dtype)


# -- Netpbm I/O -----------------------------------------------------------


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_ppm(path, rgb) -> None:
    """Binary P6, 8-bit; ``rgb`` is (3, H, W) in [0, 1]."""
    arr = np.asarray(getattr(rgb, "data", rgb), dtype=np.float32)
    levels = _to_levels(arr, 255, np.uint8).transpose(1, 2, 0)
    h, w = levels.shape[:2]
    _atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + levels.tobytes())


def write_pgm16(path, values) -> None:
    """Binary P5, 16-bit big-endian; values in [0, 1] scaled by 65535."""
    levels = _to_levels(values, 65535, ">u2")
    h, w = levels.shape
    _atomic_write(path, b"P5\n%d %d\n65535\n" % (w, h) + levels.tobytes())


def write_pgm8(path, labels) -> None:
    """Binary P5, 8-bit integer map (segmentation masks)."""
    arr = np.asarray(labels)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("8-bit PGM values must lie in [0, 255]")
    h, w = arr.shape
    _atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + arr.astype(np.uint8).tobytes())


def _read_netpbm(path, magic: bytes):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated Netpbm header")
        tokens.append(blob[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    return w, h, maxval, blob[pos + 1:]


def read_ppm(path) -> np.ndarray:
    w, h, maxval, data = _read_netpbm(path, b"P6")
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    if len(data) < 3 * w * h:
        raise ValueError(f"{path}: truncated pixel data")
    q = np.frombuffer(data[:3 * w * h], dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return dequantize(q, 255)


def read_pgm16(path) -> np.ndarray:
    w, h, maxval, data = _read_netpbm(path, b"P5")
    if maxval != 65535:
        raise ValueError(f"{path}: expected a 16-bit PGM")
    if len(data) < 2 * w * h:
        raise ValueError(f"{path}: truncated pixel data")
    q = np.frombuffer(data[:2 * w * h], dtype=">u2").reshape(h, w)
    return dequantize(q, 65535)


def read_pgm8(path) -> np.ndarray:
    w, h, maxval, data = _read_netpbm(path, b"P5")
    if maxval > 255:
        raise ValueError(f"{path}: expected an 8-bit PGM")
    if len(data) < w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w).copy()
