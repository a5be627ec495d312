"""Procedural labelled scenes and their aligned RAW/RGB pairs.

Each scene holds one object whose shape and hue family are fixed by its
class; position, scale, rotation and colour are jittered by the seed. The
background is a low-saturation smooth texture and gets the mask id ``K``.

The hue jitter is wide enough that neighbouring hue families overlap at
their edges. Scenes in the overlap are ambiguous even on clean RGB, so the
teacher is confident on most scenes but graded on some, the way a real
classifier is.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, NamedTuple, Sequence

import numpy as np

from . import raw as rawmod
from .raw import BayerImage

SHAPES = ("disk", "square", "triangle", "ring", "cross")
HUE_JITTER = 0.27
MANIFEST = "manifest.txt"
MANIFEST_VERSION = 1


class ConfigError(ValueError):
    """A configuration value is outside its valid range."""


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 10
    image_size: int = 32
    train_count: int = 5000
    eval_count: int = 1000
    noise_std: float = 0.1
    exposure_ratio: float = 1.0
    read_std: float = 0.02
    shot_scale: float = 0.01
    seed: int = 0

    def validate(self) -> "DatasetConfig":
        if self.num_classes < 1:
            raise ConfigError(f"dataset.num_classes must be >= 1, got {self.num_classes}")
        if self.num_classes > 254:
            raise ConfigError("dataset.num_classes must be <= 254 to fit 8-bit masks")
        if self.image_size < 8 or self.image_size % 8:
            raise ConfigError(f"dataset.image_size must be a positive multiple of 8, got {self.image_size}")
        if self.train_count < 1 or self.eval_count < 1:
            raise ConfigError("dataset.train_count and dataset.eval_count must be >= 1")
        if self.noise_std < 0:
            raise ConfigError(f"dataset.noise_std must be >= 0, got {self.noise_std}")
        if not 0.0 < self.exposure_ratio <= 1.0:
            raise ConfigError(f"dataset.exposure_ratio must lie in (0, 1], got {self.exposure_ratio}")
        if self.read_std < 0 or self.shot_scale < 0:
            raise ConfigError("dataset.read_std and dataset.shot_scale must be >= 0")
        return self


@dataclass(frozen=True, eq=False)
class SamplePair:
    rgb: np.ndarray
    raw: BayerImage
    class_label: int
    seg_mask: np.ndarray
    sample_id: int


class Dataset(NamedTuple):
    train: List[SamplePair]
    eval: List[SamplePair]
    config: DatasetConfig


# -- scene generation -------------------------------------------------------


def _hsv_to_rgb(h, s, v):
    h = np.mod(h, 1.0) * 6.0
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    return np.array(table[int(i)], dtype=np.float64)


def _shape_mask(kind: str, yy, xx, cy, cx, r, theta):
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u, v = c * dx + s * dy, -s * dx + c * dy
    if kind == "disk":
        return dx**2 + dy**2 <= r**2
    if kind == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "square":
        return (np.abs(u) <= 0.8 * r) & (np.abs(v) <= 0.8 * r)
    if kind == "cross":
        arm = 0.4 * r
        return ((np.abs(u) <= r) & (np.abs(v) <= arm)) | ((np.abs(v) <= r) & (np.abs(u) <= arm))
    if kind == "triangle":
        inside = np.ones_like(u, dtype=bool)
        for k in range(3):
            a = theta + k * 2 * np.pi / 3
            # half-plane facing each edge of an equilateral triangle, circumradius r
            inside &= np.cos(a) * dx + np.sin(a) * dy <= 0.5 * r
        return inside
    raise ValueError(f"unknown shape {kind!r}")


def class_appearance(class_id: int, num_classes: int = 10):
    """(shape name, hue centre) of a class."""
    families = -(-num_classes // len(SHAPES))
    return SHAPES[class_id % len(SHAPES)], (class_id // len(SHAPES)) / families


def generate_scene(seed: int, class_id: int, size: int = 32, num_classes: int = 10):
    """Render one labelled scene.

    Returns ``(rgb, seg_mask)``: a (3, size, size) float32 image quantised to
    8-bit levels and a uint8 mask holding ``class_id`` on object pixels and
    ``num_classes`` elsewhere.
    """
    if not 0 <= class_id < num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {num_classes})")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(class_id), 7]))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    bg_hue = rng.random()
    bg = _hsv_to_rgb(bg_hue, rng.uniform(0.0, 0.3), rng.uniform(0.3, 0.7))
    img = np.broadcast_to(bg[:, None, None], (3, size, size)).copy()
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi / size
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.02, 0.06, size=3)
        img += amp[:, None, None] * np.sin(fy * yy + fx * xx + phase)[None]
    img += rng.normal(0.0, 0.02, size=img.shape)

    kind, hue = class_appearance(class_id, num_classes)
    r = rng.uniform(0.21, 0.34) * size
    cy, cx = rng.uniform(r + 1, size - 1 - r, size=2)
    theta = rng.uniform(0, 2 * np.pi)
    mask = _shape_mask(kind, yy, xx, cy, cx, r, theta)
    color = _hsv_to_rgb(hue + rng.uniform(-HUE_JITTER, HUE_JITTER), rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.95))
    shade = 1.0 + 0.1 * ((yy - cy) / size)
    img = np.where(mask[None], color[:, None, None] * shade[None], img)

    rgb = rawmod.quantize8(img)
    seg = np.where(mask, class_id, num_classes).astype(np.uint8)
    return rgb, seg


# -- dataset assembly -------------------------------------------------------


def _split_labels(cfg: DatasetConfig, count: int, split: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, split]))
    return rng.permutation(np.arange(count) % cfg.num_classes)


def noise_seed(cfg: DatasetConfig, sample_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, int(sample_id), 1])


def make_raw(rgb: np.ndarray, cfg: DatasetConfig, sample_id: int) -> BayerImage:
    """RAW side of one pair, quantised to the 16-bit levels of the PGM format."""
    seed = noise_seed(cfg, sample_id)
    if cfg.exposure_ratio < 1.0:
        img = rawmod.simulate_short_exposure(rgb, cfg.exposure_ratio, cfg.read_std, cfg.shot_scale, seed)
    else:
        img = rawmod.add_gaussian_noise(rawmod.mosaic(rgb), cfg.noise_std, seed)
    return replace(img, values=rawmod.quantize16(img.values))


def derive_raw(pairs: Sequence[SamplePair], cfg: DatasetConfig) -> List[SamplePair]:
    """Rebuild the RAW side of existing pairs under a different sensor config."""
    return [replace(p, raw=make_raw(p.rgb, cfg, p.sample_id)) for p in pairs]


def _build_split(cfg: DatasetConfig, count: int, first_id: int, split: int) -> List[SamplePair]:
    out = []
    for i, label in enumerate(_split_labels(cfg, count, split)):
        sid = first_id + i
        rgb, seg = generate_scene(cfg.seed * 1_000_003 + sid, int(label), cfg.image_size, cfg.num_classes)
        out.append(SamplePair(rgb, make_raw(rgb, cfg, sid), int(label), seg, sid))
    return out


def build_dataset(cfg: DatasetConfig) -> Dataset:
    """Train and eval pairs; sample ids (and hence all seeds) are disjoint."""
    cfg.validate()
    train = _build_split(cfg, cfg.train_count, 0, 0)
    evals = _build_split(cfg, cfg.eval_count, cfg.train_count, 1)
    return Dataset(train, evals, cfg)


def rebuild_raw(ds: Dataset, cfg: DatasetConfig) -> Dataset:
    if (cfg.num_classes, cfg.image_size, cfg.seed) != (ds.config.num_classes, ds.config.image_size, ds.config.seed):
        raise ConfigError("rebuild_raw can only change the sensor settings of a dataset")
    return Dataset(derive_raw(ds.train, cfg), derive_raw(ds.eval, cfg), cfg)


def stack(pairs: Sequence[SamplePair]):
    """(rgb N3HW, raw NHW, labels N, masks NHW) arrays of a split."""
    rgb = np.stack([p.rgb for p in pairs]).astype(np.float32)
    raw = np.stack([p.raw.values for p in pairs]).astype(np.float32)
    labels = np.array([p.class_label for p in pairs], dtype=np.int64)
    masks = np.stack([p.seg_mask for p in pairs]).astype(np.int64)
    return rgb, raw, labels, masks


# -- on-disk layout ---------------------------------------------------------


def config_lines(cfg: DatasetConfig) -> List[str]:
    return [f"dataset.{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg)]


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write PPM/PGM images and a tab-separated manifest under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("rgb", "raw", "mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = [f"# rawdistill dataset manifest v{MANIFEST_VERSION}"]
    lines += [f"# {line}" for line in config_lines(ds.config)]
    lines.append("sample_id\tsplit\tclass_label\trgb\traw\tmask")
    for split, pairs in (("train", ds.train), ("eval", ds.eval)):
        for p in pairs:
            name = f"{p.sample_id:06d}"
            paths = (f"rgb/{name}.ppm", f"raw/{name}.pgm", f"mask/{name}.pgm")
            rawmod.write_ppm(out / paths[0], p.rgb)
            rawmod.write_pgm16(out / paths[1], p.raw.values)
            rawmod.write_pgm8(out / paths[2], p.seg_mask)
            lines.append("\t".join([str(p.sample_id), split, str(p.class_label), *paths]))
    payload = "\n".join(lines) + "\n"
    tmp = out / f"{MANIFEST}.tmp{os.getpid()}"
    tmp.write_text(payload, encoding="utf-8", newline="\n")
    os.replace(tmp, out / MANIFEST)
    return out / MANIFEST


def _parse_config_value(text: str, typ):
    return typ(float(text)) if typ is int else typ(text)


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    path = root / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    values = {}
    train, evals = [], []
    types = {f.name: f.type for f in fields(DatasetConfig)}
    header_seen = False
    exposure = 1.0
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("dataset.") and "=" in body:
                key, val = body[len("dataset."):].split("=", 1)
                typ = {"int": int, "float": float}.get(types.get(key), float)
                values[key] = _parse_config_value(val, typ)
            continue
        if not header_seen:
            header_seen = True
            continue
        if not line.strip():
            continue
        sid, split, label, rgb_p, raw_p, mask_p = line.split("\t")
        values.setdefault("exposure_ratio", 1.0)
        exposure = values["exposure_ratio"]
        rgb = rawmod.read_ppm(root / rgb_p)
        raw = BayerImage(rawmod.read_pgm16(root / raw_p), exposure_ratio=exposure)
        mask = rawmod.read_pgm8(root / mask_p)
        pair = SamplePair(rgb, raw, int(label), mask, int(sid))
        (train if split == "train" else evals).append(pair)
    cfg = DatasetConfig(**values)
    return Dataset(train, evals, cfg)
