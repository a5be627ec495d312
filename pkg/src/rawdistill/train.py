"""Training loops, agreement metrics and the experiment drivers.

A teacher is trained on clean RGB with ground-truth labels. Students start
from the teacher's weights and are trained on the RAW side of the same pairs
in one of three modes:

``gt_labels``
    CE against the synthetic ground truth.
``predicted_labels``
    CE against the teacher's argmax on the paired RGB image.
``isp_distillation``
    the combined CE + KD (+ feature) loss against the teacher.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import data as datamod
from . import raw as rawmod
from . import tensor as tn
from .checkpoint import ModelCheckpoint
from .data import ConfigError, Dataset, DatasetConfig, SamplePair
from .distill import DistillConfig, FeatureShapeError, ce_loss, combined_loss, segmentation_loss
from .models import ArchSpec, Model, build_model, count_flops, forward_with_features, freeze_fraction
from .models import init_student_from_teacher, predict

log = logging.getLogger(__name__)

MODES = ("gt_labels", "predicted_labels", "isp_distillation")
FILTERED_THRESHOLD = 0.8


class TrainingDivergedError(RuntimeError):
    pass


class EmptyEvaluationError(ValueError):
    """No eval samples survived the confidence filter."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    teacher_epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    trainable_fraction: float = 1.0
    mode: str = "isp_distillation"

    def validate(self) -> "TrainConfig":
        if self.epochs < 0 or self.teacher_epochs < 1:
            raise ConfigError("train.epochs must be >= 0 and train.teacher_epochs >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"train.learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"train.momentum must lie in [0, 1), got {self.momentum}")
        if self.trainable_fraction not in (0.25, 0.5, 1.0):
            raise ConfigError(f"train.trainable_fraction must be 0.25, 0.5 or 1.0, got {self.trainable_fraction}")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}, got {self.mode!r}")
        return self


# -- inputs -----------------------------------------------------------------


def rgb_inputs(pairs: Sequence[SamplePair], stats: rawmod.BayerStats) -> np.ndarray:
    return rawmod.bayer_normalize(np.stack([p.rgb for p in pairs]), stats)


def raw_inputs(pairs: Sequence[SamplePair], stats: rawmod.BayerStats) -> np.ndarray:
    """Bilinear-filled and per-Bayer-channel normalised RAW frames."""
    filled = np.stack([rawmod.bilinear_fill(p.raw) for p in pairs])
    return rawmod.bayer_normalize(filled, stats)


def model_inputs(ckpt: ModelCheckpoint, pairs: Sequence[SamplePair], domain: Optional[str] = None) -> np.ndarray:
    domain = domain or ckpt.input_domain
    if domain == "raw":
        if ckpt.bayer_stats is None:
            raise ValueError("checkpoint has no Bayer statistics to normalise RAW input")
        return raw_inputs(pairs, ckpt.bayer_stats)
    if ckpt.rgb_stats is None:
        raise ValueError("checkpoint has no RGB statistics to normalise RGB input")
    return rgb_inputs(pairs, ckpt.rgb_stats)


# -- training ---------------------------------------------------------------


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng(np.random.SeedSequence([int(seed), 5, epoch])).permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _step(model: Model, loss: tn.Tensor, state: tn.OptimizerState) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDivergedError(f"non-finite training loss {value}; lower train.learning_rate")
    loss.backward()
    trainable = model.trainable()
    grads = {k: p.grad for k, p in trainable.items()}
    tn.sgd_step(trainable, grads, state)
    for p in model.params.values():
        p.grad = None
    return value


def _fmt_losses(losses: Sequence[float]) -> str:
    return ";".join(repr(float(v)) for v in losses)


def train_teacher(dataset: Dataset, arch: ArchSpec, cfg: TrainConfig) -> ModelCheckpoint:
    """Train on clean RGB against ground truth (labels or masks)."""
    cfg.validate()
    arch.validate()
    train = dataset.train
    stats = rawmod.compute_rgb_stats([p.rgb for p in train])
    x = rgb_inputs(train, stats)
    labels = np.array([p.class_label for p in train])
    masks = np.stack([p.seg_mask for p in train]).astype(np.int64)
    model = build_model(arch, cfg.seed)
    state = tn.OptimizerState(cfg.learning_rate, cfg.momentum)
    epoch_losses = []
    for epoch in range(cfg.teacher_epochs):
        total, count = 0.0, 0
        for idx in _batches(len(train), cfg.batch_size, cfg.seed, epoch):
            logits, _ = forward_with_features(model, x[idx])
            if arch.kind == "classifier":
                loss = ce_loss(logits, labels[idx])
            else:
                loss = segmentation_loss(logits.detach(), logits, masks[idx], DistillConfig(alpha=1.0,
                                         use_feature_loss=False))
            total += _step(model, loss, state) * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
        log.info("teacher epoch %d loss %.4f", epoch + 1, epoch_losses[-1])

    meta = {"role": "teacher", "input_domain": "rgb", "train_seed": str(cfg.seed),
            "train_loss": _fmt_losses(epoch_losses)}
    ckpt = ModelCheckpoint.from_model(model, rgb_stats=stats, meta=meta)
    ev = dataset.eval
    if arch.kind == "classifier":
        pred = predict(model, rgb_inputs(ev, stats)).argmax(axis=1)
        ckpt.meta["eval_accuracy"] = repr(float(np.mean(pred == np.array([p.class_label for p in ev]))))
    else:
        pred = predict(model, rgb_inputs(ev, stats)).argmax(axis=1)
        ckpt.meta["eval_miou"] = repr(miou_from_maps(np.stack([p.seg_mask for p in ev]), pred))
    return ckpt


def distill_student(teacher_ckpt: ModelCheckpoint, dataset: Dataset, train_cfg: TrainConfig,
                    distill_cfg: Optional[DistillConfig] = None,
                    student_init: Optional[ModelCheckpoint] = None) -> ModelCheckpoint:
    """Adapt a copy of the teacher (or of ``student_init``) to RAW input.

    The student sees bilinear-filled, Bayer-normalised RAW; the teacher sees
    the clean RGB of the same pair and is evaluated on every batch.
    """
    train_cfg.validate()
    distill_cfg = (distill_cfg or DistillConfig()).validate()
    init = student_init if student_init is not None else teacher_ckpt
    kind = teacher_ckpt.arch.kind
    if init.arch.kind != kind or init.arch.num_classes != teacher_ckpt.arch.num_classes:
        raise ValueError(f"student arch {init.arch} is incompatible with teacher arch {teacher_ckpt.arch}")
    if (train_cfg.mode == "isp_distillation" and distill_cfg.use_feature_loss
            and init.arch.feature_dim != teacher_ckpt.arch.feature_dim):
        raise FeatureShapeError(
            f"teacher feature dim {teacher_ckpt.arch.feature_dim} != student {init.arch.feature_dim}; "
            "disable the feature loss (distill.use_feature_loss=false) for a stronger teacher"
        )
    train = dataset.train
    bstats = rawmod.compute_bayer_stats([p.raw for p in train])
    student = freeze_fraction(init_student_from_teacher(init), train_cfg.trainable_fraction)
    teacher = teacher_ckpt.to_model()
    for p in teacher.params.values():
        p.requires_grad = False

    x_s = raw_inputs(train, bstats)
    x_t = model_inputs(teacher_ckpt, train, "rgb")
    gt = (np.array([p.class_label for p in train]) if kind == "classifier"
          else np.stack([p.seg_mask for p in train]).astype(np.int64))
    state = tn.OptimizerState(train_cfg.learning_rate, train_cfg.momentum)
    mode = train_cfg.mode
    epoch_losses = []
    for epoch in range(train_cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(train), train_cfg.batch_size, train_cfg.seed, epoch):
            with tn.no_grad():
                t_logits, t_feats = forward_with_features(teacher, x_t[idx])
            s_logits, s_feats = forward_with_features(student, x_s[idx])
            hard = gt[idx] if mode == "gt_labels" else t_logits.data.argmax(axis=1)
            if kind == "classifier":
                if mode == "isp_distillation":
                    loss = combined_loss(t_logits, s_logits, t_feats, s_feats, hard, distill_cfg)
                else:
                    loss = ce_loss(s_logits, hard)
            else:
                cfg = distill_cfg if mode == "isp_distillation" else DistillConfig(
                    alpha=1.0, use_feature_loss=False, temperature=distill_cfg.temperature)
                loss = segmentation_loss(t_logits, s_logits, hard, cfg, t_feats, s_feats)
            total += _step(student, loss, state) * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
        log.info("student (%s) epoch %d loss %.4f", mode, epoch + 1, epoch_losses[-1])

    meta = {
        "role": "student",
        "input_domain": "raw",
        "mode": mode,
        "train_seed": str(train_cfg.seed),
        "trainable_fraction": repr(train_cfg.trainable_fraction),
        "train_loss": _fmt_losses(epoch_losses),
    }
    return ModelCheckpoint.from_model(student, bayer_stats=bstats, rgb_stats=teacher_ckpt.rgb_stats, meta=meta)


# -- metrics ----------------------------------------------------------------


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def topk_sets(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest logits per row; ties go to the lower class index."""
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


def agreement_from_logits(teacher_logits: np.ndarray, student_logits: np.ndarray, k: int = 1,
                          conf_threshold: float = 0.0) -> dict:
    """Fraction of confident samples whose teacher argmax is in the student's top-k."""
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    student_logits = np.asarray(student_logits, dtype=np.float64)
    num_classes = teacher_logits.shape[1]
    if not 1 <= k <= num_classes:
        raise ValueError(f"k must lie in [1, {num_classes}], got {k}")
    keep = softmax_np(teacher_logits).max(axis=1) > conf_threshold
    if not keep.any():
        raise EmptyEvaluationError(f"no eval sample has teacher confidence above {conf_threshold}")
    target = topk_sets(teacher_logits, 1)[:, 0]
    hits = (topk_sets(student_logits, k) == target[:, None]).any(axis=1)
    return {
        "agreement": float(hits[keep].mean()),
        "evaluated_count": int(keep.sum()),
        "filtered_out_count": int((~keep).sum()),
    }


def topk_agreement(student_ckpt: ModelCheckpoint, teacher_ckpt: ModelCheckpoint, eval_set: Sequence[SamplePair],
                   k: int = 1, conf_threshold: float = FILTERED_THRESHOLD,
                   student_domain: Optional[str] = None) -> dict:
    t = predict(teacher_ckpt.to_model(), model_inputs(teacher_ckpt, eval_set, "rgb"))
    s = predict(student_ckpt.to_model(), model_inputs(student_ckpt, eval_set, student_domain))
    out = agreement_from_logits(t, s, k, conf_threshold)
    return {f"top{k}_agreement": out["agreement"], "evaluated_count": out["evaluated_count"],
            "filtered_out_count": out["filtered_out_count"]}


def miou_from_maps(teacher_maps: np.ndarray, student_maps: np.ndarray) -> float:
    """Mean IoU over classes present in either map set (pooled over all images)."""
    a = np.asarray(teacher_maps).ravel()
    b = np.asarray(student_maps).ravel()
    if a.size == 0 or a.shape != b.shape:
        raise ValueError("miou needs two non-empty maps of equal shape")
    ious = []
    for c in np.union1d(a, b):
        inter = np.count_nonzero((a == c) & (b == c))
        union = np.count_nonzero((a == c) | (b == c))
        ious.append(inter / union)
    return float(np.mean(ious))


def miou_agreement(student_ckpt: ModelCheckpoint, teacher_ckpt: ModelCheckpoint, eval_set: Sequence[SamplePair],
                   student_domain: Optional[str] = None) -> float:
    if len(eval_set) == 0:
        raise ValueError("miou_agreement needs a non-empty eval set")
    t = predict(teacher_ckpt.to_model(), model_inputs(teacher_ckpt, eval_set, "rgb")).argmax(axis=1)
    s = predict(student_ckpt.to_model(), model_inputs(student_ckpt, eval_set, student_domain)).argmax(axis=1)
    return miou_from_maps(t, s)


# -- reports ----------------------------------------------------------------

REPORT_COLUMNS = (
    "experiment", "mode", "seed", "noise_std", "exposure_ratio", "trainable_fraction", "alpha",
    "temperature", "use_feature_loss", "conf_threshold", "top1_agreement", "top5_agreement",
    "miou_agreement", "gt_accuracy", "evaluated_count", "filtered_out_count", "flops",
    "per_epoch_train_loss", "config",
)


@dataclass
class MetricsReport:
    experiment: str
    mode: str
    seed: int
    top1_agreement: Optional[float] = None
    top5_agreement: Optional[float] = None
    miou_agreement: Optional[float] = None
    gt_accuracy: Optional[float] = None
    per_epoch_train_loss: List[float] = field(default_factory=list)
    evaluated_count: int = 0
    filtered_out_count: int = 0
    flops: int = 0
    config_echo: Dict[str, object] = field(default_factory=dict)

    def metric(self, name: str) -> float:
        return getattr(self, name)

    def row(self) -> Dict[str, str]:
        c = self.config_echo

        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        out = {
            "experiment": self.experiment,
            "mode": self.mode,
            "seed": str(self.seed),
            "noise_std": fmt(c.get("dataset.noise_std")),
            "exposure_ratio": fmt(c.get("dataset.exposure_ratio")),
            "trainable_fraction": fmt(c.get("train.trainable_fraction")),
            "alpha": fmt(c.get("distill.alpha")),
            "temperature": fmt(c.get("distill.temperature")),
            "use_feature_loss": fmt(c.get("distill.use_feature_loss")),
            "conf_threshold": fmt(c.get("eval.conf_threshold")),
            "top1_agreement": fmt(self.top1_agreement),
            "top5_agreement": fmt(self.top5_agreement),
            "miou_agreement": fmt(self.miou_agreement),
            "gt_accuracy": fmt(self.gt_accuracy),
            "evaluated_count": str(self.evaluated_count),
            "filtered_out_count": str(self.filtered_out_count),
            "flops": str(self.flops),
            "per_epoch_train_loss": _fmt_losses(self.per_epoch_train_loss),
            "config": ";".join(f"{k}={fmt(v)}" for k, v in sorted(c.items())),
        }
        return out


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def read_report_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected report header {reader.fieldnames}")
        return list(reader)


def summarize(reports: Sequence[MetricsReport]) -> str:
    """Human-readable table of the headline metrics."""
    lines = []
    for r in reports:
        parts = [f"{r.experiment:<22}", f"{r.mode:<18}", f"seed={r.seed}"]
        for name in ("top1_agreement", "top5_agreement", "miou_agreement", "gt_accuracy"):
            v = getattr(r, name)
            if v is not None:
                parts.append(f"{name}={v:.4f}")
        parts.append(f"n={r.evaluated_count}/{r.evaluated_count + r.filtered_out_count}")
        parts.append(f"flops={r.flops}")
        lines.append("  ".join(parts))
    return "\n".join(lines) + "\n"


def config_echo(dataset_cfg: DatasetConfig, train_cfg: TrainConfig, distill_cfg: DistillConfig,
                arch: ArchSpec, conf_threshold: Optional[float]) -> Dict[str, object]:
    echo = {}
    for prefix, obj in (("dataset", dataset_cfg), ("train", train_cfg), ("distill", distill_cfg), ("arch", arch)):
        for f in fields(obj):
            echo[f"{prefix}.{f.name}"] = getattr(obj, f.name)
    echo["eval.conf_threshold"] = conf_threshold
    return echo


def default_threshold(dataset_cfg: DatasetConfig) -> float:
    """Unfiltered for mosaic+noise data, p > 0.8 for the short-exposure analogue."""
    return FILTERED_THRESHOLD if dataset_cfg.exposure_ratio < 1.0 else 0.0


def evaluate(student_ckpt: ModelCheckpoint, teacher_ckpt: ModelCheckpoint, dataset: Dataset,
             conf_threshold: Optional[float] = None, experiment: str = "eval", mode: Optional[str] = None,
             seed: int = 0, echo: Optional[dict] = None, student_domain: Optional[str] = None) -> MetricsReport:
    ev = dataset.eval
    thr = default_threshold(dataset.config) if conf_threshold is None else conf_threshold
    arch = student_ckpt.arch
    report = MetricsReport(experiment, mode or student_ckpt.meta.get("mode", "teacher"), seed,
                           flops=count_flops(arch), config_echo=dict(echo or {}))
    report.config_echo.setdefault("eval.conf_threshold", thr)
    losses = student_ckpt.meta.get("train_loss", "")
    report.per_epoch_train_loss = [float(v) for v in losses.split(";") if v]
    t = predict(teacher_ckpt.to_model(), model_inputs(teacher_ckpt, ev, "rgb"))
    s = predict(student_ckpt.to_model(), model_inputs(student_ckpt, ev, student_domain))
    if arch.kind == "classifier":
        k5 = min(5, arch.num_classes)
        a1 = agreement_from_logits(t, s, 1, thr)
        report.top1_agreement = a1["agreement"]
        report.top5_agreement = agreement_from_logits(t, s, k5, thr)["agreement"]
        report.evaluated_count, report.filtered_out_count = a1["evaluated_count"], a1["filtered_out_count"]
        labels = np.array([p.class_label for p in ev])
        report.gt_accuracy = float(np.mean(topk_sets(s, 1)[:, 0] == labels))
    else:
        report.miou_agreement = miou_from_maps(t.argmax(axis=1), s.argmax(axis=1))
        report.evaluated_count = len(ev)
        masks = np.stack([p.seg_mask for p in ev])
        report.gt_accuracy = miou_from_maps(masks, s.argmax(axis=1))
    return report


def teacher_report(teacher_ckpt: ModelCheckpoint, dataset: Dataset, echo: Optional[dict] = None) -> MetricsReport:
    """Teacher on clean RGB: the upper-bound row (agreement with itself is 1)."""
    rep = evaluate(teacher_ckpt, teacher_ckpt, dataset, 0.0, "teacher", "teacher", int(
        teacher_ckpt.meta.get("train_seed", 0)), echo, student_domain="rgb")
    return rep


# -- experiment drivers -----------------------------------------------------


@dataclass(frozen=True)
class Job:
    experiment: str
    dataset_cfg: DatasetConfig
    train_cfg: TrainConfig
    distill_cfg: DistillConfig
    conf_threshold: Optional[float] = None


def run_job(teacher_ckpt: ModelCheckpoint, dataset: Dataset, job: Job,
            student_init: Optional[ModelCheckpoint] = None) -> MetricsReport:
    """Distill one student and evaluate it against the teacher."""
    student = distill_student(teacher_ckpt, dataset, job.train_cfg, job.distill_cfg, student_init)
    thr = default_threshold(dataset.config) if job.conf_threshold is None else job.conf_threshold
    echo = config_echo(dataset.config, job.train_cfg, job.distill_cfg, student.arch, thr)
    return evaluate(student, teacher_ckpt, dataset, thr, job.experiment, job.train_cfg.mode,
                    job.train_cfg.seed, echo)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RAWDISTILL_THREADS", "1")))
    except ValueError:
        return 1


_SHARED: dict = {}


def _run_shared(job_and_key):
    job, key = job_and_key
    teacher, datasets = _SHARED["teacher"], _SHARED["datasets"]
    return run_job(teacher, datasets[key], job)


def run_jobs(teacher_ckpt: ModelCheckpoint, jobs: Sequence[Job], datasets: Dict[tuple, Dataset],
             key_of=lambda job: _sensor_key(job.dataset_cfg)) -> List[MetricsReport]:
    """Run independent jobs, in worker processes when RAWDISTILL_THREADS > 1.

    Results come back in job order and do not depend on the worker count.
    """
    workers = min(worker_count(), len(jobs))
    keyed = [(job, key_of(job)) for job in jobs]
    if workers <= 1:
        return [run_job(teacher_ckpt, datasets[k], job) for job, k in keyed]
    import multiprocessing as mp

    _SHARED.update(teacher=teacher_ckpt, datasets=datasets)
    try:
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
            return list(pool.map(_run_shared, keyed))
    finally:
        _SHARED.clear()


def _sensor_key(cfg: DatasetConfig) -> tuple:
    return (cfg.noise_std, cfg.exposure_ratio, cfg.read_std, cfg.shot_scale)


def _as_dataset(base) -> Dataset:
    return base if isinstance(base, Dataset) else datamod.build_dataset(base)


def noise_sweep(teacher_ckpt: ModelCheckpoint, base_dataset, stds: Sequence[float], train_cfg: TrainConfig,
                distill_cfg: DistillConfig, seeds: Sequence[int] = (0, 1, 2),
                modes: Sequence[str] = ("predicted_labels", "isp_distillation"),
                conf_threshold: Optional[float] = None) -> List[MetricsReport]:
    """For each noise std rebuild the RAW side and distill every (mode, seed)."""
    if len(stds) == 0:
        raise ValueError("noise_sweep needs at least one std")
    base = _as_dataset(base_dataset)
    datasets, jobs = {}, []
    for std in stds:
        cfg = replace(base.config, noise_std=float(std), exposure_ratio=1.0)
        ds = base if _sensor_key(cfg) == _sensor_key(base.config) else datamod.rebuild_raw(base, cfg)
        datasets[_sensor_key(cfg)] = ds
        for mode in modes:
            for seed in seeds:
                jobs.append(Job("noise_sweep", cfg, replace(train_cfg, mode=mode, seed=seed), distill_cfg,
                                conf_threshold))
    return run_jobs(teacher_ckpt, jobs, datasets)


def partial_finetune_ablation(teacher_ckpt: ModelCheckpoint, dataset: Dataset, fractions: Sequence[float],
                              train_cfg: TrainConfig, distill_cfg: DistillConfig,
                              seeds: Sequence[int] = (0, 1, 2),
                              conf_threshold: Optional[float] = None) -> List[MetricsReport]:
    for f in fractions:
        if f not in (0.25, 0.5, 1.0):
            raise ConfigError(f"unsupported trainable fraction {f}")
    jobs = [Job("partial_finetune", dataset.config, replace(train_cfg, trainable_fraction=float(f), seed=s),
                distill_cfg, conf_threshold) for f in fractions for s in seeds]
    return run_jobs(teacher_ckpt, jobs, {_sensor_key(dataset.config): dataset})


def feature_ablation(teacher_ckpt: ModelCheckpoint, dataset: Dataset, train_cfg: TrainConfig,
                     distill_cfg: DistillConfig, seeds: Sequence[int] = (0, 1, 2),
                     conf_threshold: Optional[float] = None,
                     stronger_teacher: Optional[ModelCheckpoint] = None) -> List[MetricsReport]:
    """ISP distillation with and without the feature term.

    With ``stronger_teacher`` an extra row distills from that (wider) teacher
    into a copy of ``teacher_ckpt`` with the feature term off. Agreement is
    always measured against ``teacher_ckpt``.
    """
    base = replace(train_cfg, mode="isp_distillation")
    rows = []
    for name, dcfg in (("features_loss", replace(distill_cfg, use_feature_loss=True)),
                       ("no_features_loss", replace(distill_cfg, use_feature_loss=False))):
        jobs = [Job(name, dataset.config, replace(base, seed=s), dcfg, conf_threshold) for s in seeds]
        rows += run_jobs(teacher_ckpt, jobs, {_sensor_key(dataset.config): dataset})
    if stronger_teacher is not None:
        dcfg = replace(distill_cfg, use_feature_loss=False)
        for s in seeds:
            student = distill_student(stronger_teacher, dataset, replace(base, seed=s), dcfg, teacher_ckpt)
            thr = default_threshold(dataset.config) if conf_threshold is None else conf_threshold
            echo = config_echo(dataset.config, replace(base, seed=s), dcfg, student.arch, thr)
            echo["teacher.width"] = stronger_teacher.arch.width
            rows.append(evaluate(student, teacher_ckpt, dataset, thr, "stronger_teacher_no_features",
                                 "isp_distillation", s, echo))
    return rows


def mean_metric(reports: Sequence[MetricsReport], metric: str, **where) -> float:
    """Mean of ``metric`` over reports whose echo/attributes match ``where``."""
    vals = []
    for r in reports:
        ok = True
        for k, v in where.items():
            have = getattr(r, k) if hasattr(r, k) else r.config_echo.get(k.replace("__", "."))
            if have != v:
                ok = False
                break
        if ok:
            vals.append(r.metric(metric))
    if not vals:
        raise ValueError(f"no reports match {where}")
    return float(np.mean(vals))


def sweep_curve_csv(reports: Sequence[MetricsReport], mode: str, metric: str = "top1_agreement") -> str:
    """Two-column ``std,agreement`` CSV (seed mean) for one mode."""
    stds = sorted({r.config_echo["dataset.noise_std"] for r in reports if r.mode == mode})
    lines = ["std,agreement"]
    for std in stds:
        lines.append(f"{std!r},{mean_metric(reports, metric, mode=mode, dataset__noise_std=std)!r}")
    return "\n".join(lines) + "\n"
