"""``rawdistill`` command line.

Every command takes ``--config FILE`` and ``--out DIR`` and writes the fully
resolved config to ``DIR/resolved_config.txt``. Any config key can be
overridden with ``--set section.key=value``; the common ones also have
dedicated flags (``--mode``, ``--alpha``, ``--exposure-ratio``, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import data as datamod
from . import train as tr
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config, write_text_atomic
from .data import ConfigError
from .models import ArchMismatchError

log = logging.getLogger("rawdistill")

EXIT_CONFIG = 2
EXIT_RUNTIME = 1

# flag -> config key; values are parsed by the config layer
OVERRIDE_FLAGS = {
    "--seed": "train.seed",
    "--dataset-seed": "dataset.seed",
    "--num-classes": "dataset.num_classes",
    "--image-size": "dataset.image_size",
    "--train-count": "dataset.train_count",
    "--eval-count": "dataset.eval_count",
    "--noise-std": "dataset.noise_std",
    "--exposure-ratio": "dataset.exposure_ratio",
    "--read-std": "dataset.read_std",
    "--shot-scale": "dataset.shot_scale",
    "--epochs": "train.epochs",
    "--teacher-epochs": "train.teacher_epochs",
    "--batch-size": "train.batch_size",
    "--learning-rate": "train.learning_rate",
    "--momentum": "train.momentum",
    "--trainable-fraction": "train.trainable_fraction",
    "--mode": "train.mode",
    "--alpha": "distill.alpha",
    "--temperature": "distill.temperature",
    "--feature-loss-weight": "distill.feature_loss_weight",
    "--kind": "arch.kind",
    "--width": "arch.width",
    "--conf-threshold": "eval.conf_threshold",
    "--experiment": "run.experiment",
    "--seeds": "run.seeds",
    "--stds": "run.stds",
    "--fractions": "run.fractions",
}


class CommandError(RuntimeError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    for flag, key in OVERRIDE_FLAGS.items():
        p.add_argument(flag, dest=key, default=None, help=f"override {key}")
    p.add_argument("--no-feature-loss", action="store_true", help="set distill.use_feature_loss=false")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rawdistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic RAW/RGB dataset")
    _common(p)

    p = sub.add_parser("train-teacher", help="train the RGB teacher")
    _common(p)
    p.add_argument("--data", required=True)

    for name, text in (("distill", "train a RAW student"), ("sweep-noise", "noise-level sweep"),
                       ("ablate-finetune", "partial finetuning ablation"),
                       ("ablate-features", "feature-loss ablation")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--teacher", required=True)
        if name == "ablate-features":
            p.add_argument("--stronger-teacher", help="wider teacher checkpoint for the extra row")

    p = sub.add_parser("eval", help="agreement of a student with its teacher")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in OVERRIDE_FLAGS.values():
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.no_feature_loss:
        overrides["distill.use_feature_loss"] = "false"
    return load_config(args.config, overrides)


def _load_data(data_dir, cfg: RunConfig) -> datamod.Dataset:
    """Dataset from disk, with the RAW side re-simulated if the sensor config differs."""
    if not (Path(data_dir) / datamod.MANIFEST).is_file():
        raise CommandError(f"no dataset at {data_dir} (run gen-data first)")
    ds = datamod.load_dataset(data_dir)
    want = cfg.dataset
    have = ds.config
    sensor = ("noise_std", "exposure_ratio", "read_std", "shot_scale")
    if any(getattr(want, k) != getattr(have, k) for k in sensor):
        log.info("re-simulating RAW side for the configured sensor settings")
        ds = datamod.rebuild_raw(ds, replace(have, **{k: getattr(want, k) for k in sensor}))
    return ds


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CommandError(f"checkpoint {path} does not exist") from None


def _check_teacher(teacher, cfg: RunConfig) -> None:
    want = cfg.arch_spec
    if teacher.arch != want:
        raise ArchMismatchError(f"teacher checkpoint arch {teacher.arch} does not match configured arch {want}")


def _write_reports(out: Path, stem: str, reports) -> None:
    write_text_atomic(out / f"{stem}.csv", tr.reports_to_csv(reports))
    write_text_atomic(out / f"{stem}_summary.txt", tr.summarize(reports))
    tr.read_report_csv(out / f"{stem}.csv")


def cmd_gen_data(args, cfg: RunConfig, out: Path) -> None:
    ds = datamod.build_dataset(cfg.dataset)
    datamod.save_dataset(ds, out)
    datamod.load_dataset(out)


def cmd_train_teacher(args, cfg: RunConfig, out: Path) -> None:
    ds = _load_data(args.data, cfg)
    if ds.config.num_classes != cfg.dataset.num_classes or ds.config.image_size != cfg.dataset.image_size:
        raise ConfigError("dataset on disk does not match dataset.num_classes / dataset.image_size")
    ckpt = tr.train_teacher(ds, cfg.arch_spec, cfg.train)
    save_checkpoint(ckpt, out / "teacher.ckpt")
    load_checkpoint(out / "teacher.ckpt")
    echo = tr.config_echo(ds.config, cfg.train, cfg.distill, cfg.arch_spec, 0.0)
    _write_reports(out, "teacher_report", [tr.teacher_report(ckpt, ds, echo)])


def cmd_distill(args, cfg: RunConfig, out: Path) -> None:
    ds = _load_data(args.data, cfg)
    teacher = _load_ckpt(args.teacher)
    _check_teacher(teacher, cfg)
    job = tr.Job(cfg.run.experiment, ds.config, cfg.train, cfg.distill, cfg.conf_threshold)
    student = tr.distill_student(teacher, ds, cfg.train, cfg.distill)
    save_checkpoint(student, out / "student.ckpt")
    load_checkpoint(out / "student.ckpt")
    thr = tr.default_threshold(ds.config) if job.conf_threshold is None else job.conf_threshold
    echo = tr.config_echo(ds.config, cfg.train, cfg.distill, student.arch, thr)
    report = tr.evaluate(student, teacher, ds, thr, cfg.run.experiment, cfg.train.mode, cfg.train.seed, echo)
    _write_reports(out, "report", [report])


def cmd_eval(args, cfg: RunConfig, out: Path) -> None:
    ds = _load_data(args.data, cfg)
    teacher, student = _load_ckpt(args.teacher), _load_ckpt(args.student)
    if student.arch.num_classes != teacher.arch.num_classes or student.arch.kind != teacher.arch.kind:
        raise ArchMismatchError(f"student arch {student.arch} is not comparable with teacher arch {teacher.arch}")
    thr = cfg.conf_threshold
    seed = int(student.meta.get("train_seed", cfg.train.seed))
    echo = tr.config_echo(ds.config, cfg.train, cfg.distill, student.arch,
                          tr.default_threshold(ds.config) if thr is None else thr)
    report = tr.evaluate(student, teacher, ds, thr, cfg.run.experiment, None, seed, echo)
    _write_reports(out, "eval_report", [report])


def cmd_sweep_noise(args, cfg: RunConfig, out: Path) -> None:
    ds = _load_data(args.data, cfg)
    teacher = _load_ckpt(args.teacher)
    _check_teacher(teacher, cfg)
    modes = ("predicted_labels", "isp_distillation")
    reports = tr.noise_sweep(teacher, ds, cfg.run.stds, cfg.train, cfg.distill, cfg.run.seeds, modes,
                             cfg.conf_threshold)
    _write_reports(out, "sweep_noise", reports)
    metric = "top1_agreement" if teacher.arch.kind == "classifier" else "miou_agreement"
    for mode in modes:
        write_text_atomic(out / f"sweep_noise_{mode}.csv", tr.sweep_curve_csv(reports, mode, metric))


def cmd_ablate_finetune(args, cfg: RunConfig, out: Path) -> None:
    ds = _load_data(args.data, cfg)
    teacher = _load_ckpt(args.teacher)
    _check_teacher(teacher, cfg)
    reports = tr.partial_finetune_ablation(teacher, ds, cfg.run.fractions, cfg.train, cfg.distill,
                                           cfg.run.seeds, cfg.conf_threshold)
    _write_reports(out, "ablate_finetune", reports)


def cmd_ablate_features(args, cfg: RunConfig, out: Path) -> None:
    ds = _load_data(args.data, cfg)
    teacher = _load_ckpt(args.teacher)
    _check_teacher(teacher, cfg)
    stronger = _load_ckpt(args.stronger_teacher) if args.stronger_teacher else None
    reports = tr.feature_ablation(teacher, ds, cfg.train, cfg.distill, cfg.run.seeds, cfg.conf_threshold,
                                  stronger)
    _write_reports(out, "ablate_features", reports)
    metric = "top1_agreement" if teacher.arch.kind == "classifier" else "miou_agreement"
    rows = ["variant,mean_" + metric + ",delta_vs_features_loss"]
    base = tr.mean_metric(reports, metric, experiment="features_loss")
    for name in dict.fromkeys(r.experiment for r in reports):
        m = tr.mean_metric(reports, metric, experiment=name)
        rows.append(f"{name},{m!r},{m - base!r}")
    write_text_atomic(out / "ablate_features_delta.csv", "\n".join(rows) + "\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "sweep-noise": cmd_sweep_noise,
    "ablate-finetune": cmd_ablate_finetune,
    "ablate-features": cmd_ablate_features,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"rawdistill: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_text_atomic(out / "resolved_config.txt", dump_config(cfg))
    except OSError as exc:
        print(f"rawdistill: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"rawdistill: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CommandError, CheckpointError, ArchMismatchError, tr.TrainingDivergedError,
            tr.EmptyEvaluationError, ValueError, OSError) as exc:
        print(f"rawdistill {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
