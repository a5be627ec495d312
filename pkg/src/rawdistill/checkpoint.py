"""Binary named-tensor checkpoints.

Layout (all integers u32 little-endian)::

    b"RDCK" | format_version | len, descriptor (UTF-8 key=value lines)
    | tensor count | per tensor: len, name (UTF-8) | rank | dims... | f32 LE data

The descriptor carries the architecture, optional input statistics and
free-form metadata. Floats in the descriptor are written with ``repr`` so
they round-trip exactly.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, fields
from typing import Dict, Optional

import numpy as np

from .models import ArchSpec, Model, parameter_shapes
from .raw import BayerStats
from .tensor import Tensor

MAGIC = b"RDCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class of checkpoint read failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic, malformed descriptor, or a shape that disagrees with the payload."""


class UnknownTensorError(CheckpointError):
    pass


@dataclass
class ModelCheckpoint:
    arch: ArchSpec
    tensors: Dict[str, np.ndarray]
    bayer_stats: Optional[BayerStats] = None
    rgb_stats: Optional[BayerStats] = None
    meta: Dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: Model, bayer_stats=None, rgb_stats=None, meta=None) -> "ModelCheckpoint":
        return cls(model.arch, model.state(), bayer_stats, rgb_stats, dict(meta or {}))

    def to_model(self) -> Model:
        params = {k: Tensor(v.copy(), requires_grad=True) for k, v in self.tensors.items()}
        return Model(self.arch, params)

    @property
    def input_domain(self) -> str:
        """``raw`` when the model was adapted to Bayer input, else ``rgb``."""
        return self.meta.get("input_domain", "raw" if self.bayer_stats is not None else "rgb")

    def descriptor(self) -> str:
        lines = [f"arch.{f.name}={getattr(self.arch, f.name)}" for f in fields(ArchSpec)]
        for prefix, stats in (("bayer_stats", self.bayer_stats), ("rgb_stats", self.rgb_stats)):
            if stats is not None:
                lines += [f"{prefix}.{f.name}={getattr(stats, f.name)!r}" for f in fields(BayerStats)]
        for k, v in sorted(self.meta.items()):
            if "\n" in f"{k}{v}" or "=" in k:
                raise ValueError(f"metadata key/value {k!r} cannot hold newlines or '=' in the key")
            lines.append(f"meta.{k}={v}")
        return "\n".join(lines)

    def tensor_bytes(self) -> bytes:
        """Payload section only (what two checkpoints share if weights match)."""
        return _encode_tensors(self.tensors)

    def to_bytes(self) -> bytes:
        desc = self.descriptor().encode("utf-8")
        head = MAGIC + struct.pack("<I", self.format_version) + struct.pack("<I", len(desc)) + desc
        return head + self.tensor_bytes()


def _encode_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(obj, path, **kwargs) -> None:
    """Write a :class:`ModelCheckpoint` (or a model plus ``kwargs``) atomically."""
    ckpt = obj if isinstance(obj, ModelCheckpoint) else ModelCheckpoint.from_model(obj, **kwargs)
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(ckpt.to_bytes())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(f"file ends while reading {what} (need {n} bytes at offset {self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _parse_descriptor(text: str):
    arch_kw, stats_kw, meta = {}, {"bayer_stats": {}, "rgb_stats": {}}, {}
    types = {f.name: f.type for f in fields(ArchSpec)}
    for line in filter(None, text.split("\n")):
        if "=" not in line or "." not in line.split("=", 1)[0]:
            raise CheckpointFormatError(f"malformed descriptor line {line!r}")
        key, value = line.split("=", 1)
        section, name = key.split(".", 1)
        if section == "arch":
            arch_kw[name] = int(value) if types.get(name) == "int" else value
        elif section in stats_kw:
            stats_kw[section][name] = int(value) if name == "sample_count" else float(value)
        elif section == "meta":
            meta[name] = value
        else:
            raise CheckpointFormatError(f"unknown descriptor section {section!r}")
    try:
        arch = ArchSpec(**arch_kw).validate()
        stats = {k: BayerStats(**v) if v else None for k, v in stats_kw.items()}
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"invalid descriptor: {exc}") from exc
    return arch, stats, meta


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    return checkpoint_from_bytes(blob)


def checkpoint_from_bytes(blob: bytes) -> ModelCheckpoint:
    rd = _Reader(blob)
    if rd.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    version = rd.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    desc_len = rd.u32("descriptor length")
    try:
        desc = rd.take(desc_len, "descriptor").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError("descriptor is not UTF-8") from exc
    arch, stats, meta = _parse_descriptor(desc)
    expected = parameter_shapes(arch)

    tensors = {}
    count = rd.u32("tensor count")
    for _ in range(count):
        name = rd.take(rd.u32("name length"), "tensor name").decode("utf-8", errors="replace")
        rank = rd.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank, f"dims of {name}"))
        if name not in expected:
            raise UnknownTensorError(f"tensor {name!r} is not a parameter of {arch}")
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor {name!r}")
        if tuple(dims) != expected[name]:
            raise CheckpointFormatError(f"{name}: header shape {dims}, architecture expects {expected[name]}")
        n = int(np.prod(dims))
        tensors[name] = np.frombuffer(rd.take(4 * n, f"data of {name}"), dtype="<f4").astype(np.float32).reshape(dims)
    if rd.pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - rd.pos} trailing bytes after the last tensor")
    missing = [k for k in expected if k not in tensors]
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks tensors {missing}")
    tensors = {k: tensors[k] for k in expected}
    return ModelCheckpoint(arch, tensors, stats["bayer_stats"], stats["rgb_stats"], meta, version)
