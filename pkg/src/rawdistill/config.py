"""Flat ``section.key = value`` run configuration.

Precedence is defaults < config file < command-line overrides. The fully
resolved config can be written back out with :func:`dump_config` and fed
in again to repeat a run exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Tuple

from .data import ConfigError, DatasetConfig
from .distill import DistillConfig
from .models import ArchSpec
from .train import TrainConfig


@dataclass(frozen=True)
class ArchConfig:
    """Architecture keys a user can set; class count and input size follow the dataset."""

    kind: str = "classifier"
    width: int = 16


@dataclass(frozen=True)
class EvalConfig:
    # negative means: 0.0 on mosaic+noise data, 0.8 on short-exposure data
    conf_threshold: float = -1.0


@dataclass(frozen=True)
class RunSection:
    experiment: str = "rawdistill"
    seeds: Tuple[int, ...] = (0, 1, 2)
    stds: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)
    fractions: Tuple[float, ...] = (0.25, 0.5, 1.0)


SECTIONS = {
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "distill": DistillConfig,
    "arch": ArchConfig,
    "eval": EvalConfig,
    "run": RunSection,
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def arch_spec(self) -> ArchSpec:
        return ArchSpec(self.arch.kind, self.arch.width, self.dataset.num_classes, self.dataset.image_size)

    @property
    def conf_threshold(self):
        t = self.eval.conf_threshold
        return None if t < 0 else t

    def validate(self) -> "RunConfig":
        self.dataset.validate()
        self.train.validate()
        try:
            self.distill.validate()
            self.arch_spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.eval.conf_threshold >= 1.0:
            raise ConfigError("eval.conf_threshold must be < 1")
        if not self.run.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        return self

    def items(self) -> Dict[str, object]:
        out = {}
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                out[f"{section}.{f.name}"] = getattr(obj, f.name)
        return out


def known_keys() -> Dict[str, str]:
    """``section.key`` -> declared type name."""
    return {f"{s}.{f.name}": f.type for s, cls in SECTIONS.items() for f in fields(cls)}


def _coerce(key: str, typ: str, text: str):
    text = text.strip()
    try:
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if typ.startswith("Tuple[int"):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if typ.startswith("Tuple[float"):
            return tuple(float(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    keys = known_keys()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in keys:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, keys[key], val)
    return values


def apply_overrides(cfg: RunConfig, values: Mapping[str, object]) -> RunConfig:
    keys = known_keys()
    per_section: Dict[str, dict] = {}
    for key, val in values.items():
        if key not in keys:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(val, str) and keys[key] != "str":
            val = _coerce(key, keys[key], val)
        section, name = key.split(".", 1)
        per_section.setdefault(section, {})[name] = val
    return replace(cfg, **{s: replace(getattr(cfg, s), **kw) for s, kw in per_section.items()})


def load_config(path=None, overrides: Mapping[str, object] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        cfg = apply_overrides(cfg, parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    return apply_overrides(cfg, dict(overrides)).validate()


def dump_config(cfg: RunConfig) -> str:
    lines = ["# resolved rawdistill config"]
    lines += [f"{k} = {_format(v)}" for k, v in cfg.items().items()]
    return "\n".join(lines) + "\n"


def write_text_atomic(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
