"""Distillation losses: hard-label CE, temperature-softened KD, feature l2.

Teacher-side inputs are always detached, so no gradient reaches them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tn
from .tensor import ContractError, Tensor

LOG_EPS = 1e-12


class FeatureShapeError(ContractError):
    """Teacher and student feature taps differ in shape."""


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.9
    temperature: float = 4.0
    use_feature_loss: bool = True
    feature_loss_weight: float = 0.1
    kd_t_squared_scaling: bool = True

    def validate(self) -> "DistillConfig":
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"distill.alpha must lie in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ValueError(f"distill.temperature must be positive, got {self.temperature}")
        if self.feature_loss_weight < 0:
            raise ValueError("distill.feature_loss_weight must be >= 0")
        return self


def _teacher(x) -> Tensor:
    return x.detach() if isinstance(x, Tensor) else Tensor(x)


def _student(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def ce_loss(student_logits, hard_labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``."""
    s = _student(student_logits)
    labels = np.asarray(hard_labels, dtype=np.int64)
    if s.ndim != 2 or labels.shape != (s.shape[0],):
        raise ContractError(f"ce_loss expects N x K logits and N labels, got {s.shape} and {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= s.shape[1]):
        raise ContractError(f"labels must lie in [0, {s.shape[1]}), got range [{labels.min()}, {labels.max()}]")
    return -tn.mean(tn.pick(tn.log_softmax_with_temperature(s, 1.0), labels))


def kd_loss(teacher_logits, student_logits, T: float = 4.0, t_squared: bool = True) -> Tensor:
    """Soft cross-entropy ``-sum p log(q + eps)`` of the student against the teacher.

    ``p`` and ``q`` are softmaxes at temperature ``T``; the batch mean is
    scaled by ``T**2`` when ``t_squared``.
    """
    t, s = _teacher(teacher_logits), _student(student_logits)
    if t.shape != s.shape or s.ndim != 2:
        raise ContractError(f"kd_loss shape mismatch: teacher {t.shape}, student {s.shape}")
    p = tn.softmax_with_temperature(t, T).data
    logq = tn.log(tn.softmax_with_temperature(s, T) + LOG_EPS)
    loss = -tn.mean(tn.sum_(logq * p, axis=1))
    return loss * float(T) ** 2 if t_squared else loss


def feature_l2(teacher_features, student_features) -> Tensor:
    """Mean over all elements of the squared feature difference."""
    t, s = _teacher(teacher_features), _student(student_features)
    if t.shape != s.shape:
        raise FeatureShapeError(
            f"teacher features {t.shape} and student features {s.shape} differ; "
            "set distill.use_feature_loss=false for teachers of a different width"
        )
    d = s - t
    return tn.mean(d * d)


def _soft_terms(teacher_logits, student_logits, teacher_features, student_features, cfg: DistillConfig) -> Tensor:
    soft = kd_loss(teacher_logits, student_logits, cfg.temperature, cfg.kd_t_squared_scaling)
    if cfg.use_feature_loss:
        soft = soft + feature_l2(teacher_features, student_features) * cfg.feature_loss_weight
    return soft


def combined_loss(teacher_logits, student_logits, teacher_features, student_features, hard_labels,
                  cfg: Optional[DistillConfig] = None) -> Tensor:
    """``alpha * CE + (1 - alpha) * (KD + w * feature_l2)``.

    ``hard_labels`` are normally the teacher's argmax predictions.
    """
    cfg = (cfg or DistillConfig()).validate()
    ce = ce_loss(student_logits, hard_labels)
    soft = _soft_terms(teacher_logits, student_logits, teacher_features, student_features, cfg)
    return ce * cfg.alpha + soft * (1.0 - cfg.alpha)


def _per_location(maps) -> Tensor:
    """N x C x H x W -> (N*H*W) x C, class vector per location."""
    n, c, h, w = maps.shape
    return tn.reshape(tn.permute(maps, (0, 2, 3, 1)), (n * h * w, c))


def segmentation_loss(teacher_maps, student_maps, teacher_hard_maps, cfg: Optional[DistillConfig] = None,
                      teacher_features=None, student_features=None) -> Tensor:
    """Mean over every (image, location) of the per-pixel CE/KD mix.

    The feature term, when enabled, is evaluated once per image on the
    bottleneck features and weighted like in :func:`combined_loss`.
    """
    cfg = (cfg or DistillConfig()).validate()
    t, s = _teacher(teacher_maps), _student(student_maps)
    hard = np.asarray(teacher_hard_maps, dtype=np.int64)
    if t.shape != s.shape or s.ndim != 4 or hard.shape != (s.shape[0],) + s.shape[2:]:
        raise ContractError(
            f"segmentation_loss shape mismatch: teacher {t.shape}, student {s.shape}, labels {hard.shape}"
        )
    t_loc, s_loc = _per_location(t), _per_location(s)
    ce = ce_loss(s_loc, hard.reshape(-1))
    soft = kd_loss(t_loc, s_loc, cfg.temperature, cfg.kd_t_squared_scaling)
    if cfg.use_feature_loss:
        if teacher_features is None or student_features is None:
            raise ContractError("feature loss enabled but no features were passed")
        soft = soft + feature_l2(teacher_features, student_features) * cfg.feature_loss_weight
    return ce * cfg.alpha + soft * (1.0 - cfg.alpha)
