"""The small CNN zoo: a classifier and an encoder-decoder segmenter.

Both share a three-stage conv-relu-pool encoder so a segmenter or
classifier trained on RGB can seed an identically shaped RAW student.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .tensor import Tensor

ENCODER_STAGES = 3
SUPPORTED_FRACTIONS = (0.25, 0.5, 1.0)


class ArchMismatchError(ValueError):
    """Two models (or a model and a config) disagree on architecture."""


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "classifier"
    width: int = 16
    num_classes: int = 10
    input_size: int = 32

    def validate(self) -> "ArchSpec":
        if self.kind not in ("classifier", "segmenter"):
            raise ValueError(f"arch.kind must be 'classifier' or 'segmenter', got {self.kind!r}")
        if self.width < 1 or self.num_classes < 1:
            raise ValueError("arch.width and arch.num_classes must be >= 1")
        if self.input_size % 8 or self.input_size < 8:
            raise ValueError(f"arch.input_size must be a positive multiple of 8, got {self.input_size}")
        return self

    @property
    def num_outputs(self) -> int:
        return self.num_classes + 1 if self.kind == "segmenter" else self.num_classes

    @property
    def feature_dim(self) -> int:
        size = self.input_size // 8
        return 4 * self.width * (size * size if self.kind == "segmenter" else 1)


# -- layer plan -------------------------------------------------------------


@dataclass(frozen=True)
class ConvLayer:
    name: str
    c_in: int
    c_out: int
    kernel: int
    h_out: int
    w_out: int

    @property
    def pad(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class DenseLayer:
    name: str
    features: int
    outputs: int


def layer_plan(arch: ArchSpec) -> List[Union[ConvLayer, DenseLayer]]:
    """Parametrised layers in forward order."""
    arch.validate()
    w, s = arch.width, arch.input_size
    layers: list = []
    c_in = 3
    for i in range(ENCODER_STAGES):
        c_out = w * 2**i
        size = s // 2**i
        layers.append(ConvLayer(f"stage{i + 1}", c_in, c_out, 3, size, size))
        c_in = c_out
    if arch.kind == "classifier":
        layers.append(DenseLayer("head", c_in, arch.num_classes))
        return layers
    size = s // 8
    for i, c_out in enumerate((2 * w, w)):
        size *= 2
        layers.append(ConvLayer(f"decoder{i + 1}", c_in, c_out, 3, size, size))
        c_in = c_out
    layers.append(ConvLayer("head", c_in, arch.num_outputs, 1, size, size))
    return layers


def count_flops(arch_or_layers) -> int:
    """Multiply-add FLOPs (2 per MAC) of convs and dense layers only."""
    layers = layer_plan(arch_or_layers) if isinstance(arch_or_layers, ArchSpec) else arch_or_layers
    total = 0
    for layer in layers:
        if isinstance(layer, ConvLayer):
            total += 2 * layer.kernel * layer.kernel * layer.c_in * layer.c_out * layer.h_out * layer.w_out
        else:
            total += 2 * layer.features * layer.outputs
    return total


# -- model ------------------------------------------------------------------


class Model:
    """Parameters of an :class:`ArchSpec` plus its forward pass."""

    def __init__(self, arch: ArchSpec, params: Dict[str, Tensor]):
        self.arch = arch.validate()
        expected = parameter_shapes(arch)
        if list(params) != list(expected):
            raise ArchMismatchError(f"parameter names {list(params)} do not match {list(expected)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ArchMismatchError(f"{name}: shape {params[name].shape}, arch needs {shape}")
        self.params = params

    def trainable(self) -> Dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def state(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def __call__(self, x) -> Tensor:
        return forward_with_features(self, x)[0]


def parameter_shapes(arch: ArchSpec) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for layer in layer_plan(arch):
        if isinstance(layer, ConvLayer):
            shapes[f"{layer.name}.weight"] = (layer.c_out, layer.c_in, layer.kernel, layer.kernel)
            shapes[f"{layer.name}.bias"] = (layer.c_out,)
        else:
            shapes[f"{layer.name}.weight"] = (layer.features, layer.outputs)
            shapes[f"{layer.name}.bias"] = (layer.outputs,)
    return shapes


def build_model(arch: ArchSpec, seed: int = 0) -> Model:
    """Fan-in scaled uniform init (He-uniform for convs), zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    params = {}
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".bias"):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        gain = 6.0 if not name.startswith("head") else 3.0
        bound = math.sqrt(gain / fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    return Model(arch, params)


def forward_with_features(model: Model, x) -> Tuple[Tensor, Tensor]:
    """Logits and the distillation feature tap.

    The classifier tap is the pooled ``4*width`` vector; the segmenter tap is
    the flattened encoder output (the bottleneck before the decoder).
    """
    arch, p = model.arch, model.params
    x = x if isinstance(x, Tensor) else Tensor(x)
    expect = (3, arch.input_size, arch.input_size)
    if x.ndim != 4 or x.shape[1:] != expect:
        raise T.ContractError(f"model expects N x {expect[0]} x {expect[1]} x {expect[2]}, got {x.shape}")
    h = x
    for i in range(1, ENCODER_STAGES + 1):
        h = T.conv2d(h, p[f"stage{i}.weight"], p[f"stage{i}.bias"], 1, 1)
        h = T.max_pool2(T.relu(h))
    if arch.kind == "classifier":
        feats = T.global_avg_pool(h)
        return T.dense(feats, p["head.weight"], p["head.bias"]), feats
    feats = T.reshape(h, (h.shape[0], -1))
    for i in (1, 2):
        h = T.upsample_nearest2(h)
        h = T.relu(T.conv2d(h, p[f"decoder{i}.weight"], p[f"decoder{i}.bias"], 1, 1))
    logits = T.conv2d(h, p["head.weight"], p["head.bias"], 1, 0)
    # decoder ends at half resolution; logits are nearest-upsampled to the input grid
    return T.upsample_nearest2(logits), feats


def predict(model: Model, x, batch_size: int = 256) -> np.ndarray:
    """Logits for an array of inputs, without recording a tape."""
    outs = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(forward_with_features(model, x[i:i + batch_size])[0].data)
    return np.concatenate(outs)


def clone(model: Model) -> Model:
    params = {k: Tensor(p.data.copy(), requires_grad=True) for k, p in model.params.items()}
    return Model(model.arch, params)


def init_student_from_teacher(teacher, arch: Optional[ArchSpec] = None) -> Model:
    """Deep copy of the teacher's parameters, all trainable.

    ``teacher`` may be a :class:`Model` or a checkpoint. When ``arch`` is
    given it must equal the teacher's.
    """
    if not isinstance(teacher, Model):
        teacher = teacher.to_model()
    if arch is not None and arch != teacher.arch:
        raise ArchMismatchError(f"student arch {arch} differs from teacher arch {teacher.arch}")
    return clone(teacher)


def stage_of(param_name: str) -> int:
    """1-based encoder stage of a parameter; decoder and head count as stage 4."""
    prefix = param_name.split(".")[0]
    if prefix.startswith("stage"):
        return int(prefix[len("stage"):])
    return ENCODER_STAGES + 1


def freeze_fraction(model: Model, trainable_fraction: float) -> Model:
    """Train only the first ``ceil(fraction * 3)`` encoder stages (all of it at 1.0)."""
    if trainable_fraction not in SUPPORTED_FRACTIONS:
        raise ValueError(f"trainable fraction must be one of {SUPPORTED_FRACTIONS}, got {trainable_fraction}")
    if trainable_fraction == 1.0:
        for p in model.params.values():
            p.requires_grad = True
        return model
    last = math.ceil(trainable_fraction * ENCODER_STAGES)
    for name, p in model.params.items():
        p.requires_grad = stage_of(name) <= last
    return model
