"""Command-line surface: reproducible experiments from config files.

Commands: synth-data, pretrain, train, finetune, evaluate, curves,
compare, attribute. Every command is a pure function of its config file,
flags, and input files — reruns produce byte-identical artifacts.

Exit codes: 0 success; 1 usage; 2 data/schema problem; 3 comparison not
significant at 0.05 (compare only); 4 internal failure.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import os
import shutil
import sys
from dataclasses import dataclass
from typing import Optional

from . import archive as archive_mod
from . import attribution as attr_mod
from . import data as data_mod
from . import metrics as metrics_mod
from . import models as models_mod
from . import training as training_mod
from .errors import (ConfigError, DataError, FormatError, LesionbenchError,
                     MetricError, SpecError)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOT_SIGNIFICANT = 3
EXIT_INTERNAL = 4

_SCHEMA_ERRORS = (ConfigError, DataError, FormatError, SpecError, MetricError)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; this surface reserves 2 for data
    errors, so usage failures are remapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# experiment config file

@dataclass
class ExperimentConfig:
    seed: int
    n_runs: int = 10
    threshold: float = 0.5
    data_dir: Optional[str] = None
    synth_n: Optional[int] = None
    synth_positive_fraction: Optional[float] = None
    synth_seed: Optional[int] = None
    image_size: int = 40
    spec_path: Optional[str] = None
    train: training_mod.TrainConfig = None
    augmentation: Optional[data_mod.AugmentationPolicy] = None


_TRAIN_KEYS = {"learning_rate": float, "batch_size": int, "max_epochs": int,
               "early_stop_patience": int, "lr_decay_factor": float,
               "lr_patience": int, "monitor": str}
_AUGMENT_KEYS = {"enabled": None, "rotation_max_deg": float, "horizontal_flip_p": float,
                 "vertical_flip_p": float, "resize_scale_lo": float, "resize_scale_hi": float,
                 "brightness_delta_max": float, "saturation_delta_max": float}


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {raw!r}")


def load_experiment_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    known_sections = {"experiment", "data", "model", "train", "augment"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    if not parser.has_option("experiment", "seed"):
        raise ConfigError("config must set [experiment] seed (wall-clock seeding is not allowed)")
    exp = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    extras = set(exp) - {"seed", "n_runs", "threshold"}
    if extras:
        raise ConfigError(f"unknown [experiment] keys: {sorted(extras)}")
    seed = int(exp["seed"])
    n_runs = int(exp.get("n_runs", "10"))
    threshold = float(exp.get("threshold", "0.5"))

    cfg = ExperimentConfig(seed=seed, n_runs=n_runs, threshold=threshold)

    if parser.has_section("data"):
        dat = dict(parser.items("data"))
        extras = set(dat) - {"dir", "synth_n", "synth_positive_fraction", "synth_seed", "image_size"}
        if extras:
            raise ConfigError(f"unknown [data] keys: {sorted(extras)}")
        cfg.data_dir = dat.get("dir")
        cfg.synth_n = int(dat["synth_n"]) if "synth_n" in dat else None
        if "synth_positive_fraction" in dat:
            cfg.synth_positive_fraction = float(dat["synth_positive_fraction"])
        cfg.synth_seed = int(dat["synth_seed"]) if "synth_seed" in dat else None
        cfg.image_size = int(dat.get("image_size", "40"))
    if cfg.data_dir and cfg.synth_n is not None:
        raise ConfigError("[data] must set either dir or synth_n, not both")
    if cfg.data_dir is None and cfg.synth_n is None:
        raise ConfigError("[data] must set a dataset dir or synth_n parameters")
    if cfg.synth_n is not None and cfg.synth_positive_fraction is None:
        raise ConfigError("[data] synth_n requires synth_positive_fraction")
    if cfg.data_dir and not os.path.isdir(cfg.data_dir):
        raise ConfigError(f"[data] dir does not exist: {cfg.data_dir}")

    if parser.has_section("model"):
        mod = dict(parser.items("model"))
        extras = set(mod) - {"spec"}
        if extras:
            raise ConfigError(f"unknown [model] keys: {sorted(extras)}")
        cfg.spec_path = mod.get("spec")
        if cfg.spec_path and not os.path.exists(cfg.spec_path):
            raise ConfigError(f"[model] spec does not exist: {cfg.spec_path}")

    train_kwargs = {"seed": seed}
    if parser.has_section("train"):
        trn = dict(parser.items("train"))
        extras = set(trn) - set(_TRAIN_KEYS)
        if extras:
            raise ConfigError(f"unknown [train] keys: {sorted(extras)}")
        for key, conv in _TRAIN_KEYS.items():
            if key in trn:
                train_kwargs[key] = conv(trn[key])
    cfg.train = training_mod.TrainConfig(**train_kwargs)

    if parser.has_section("augment"):
        aug = dict(parser.items("augment"))
        extras = set(aug) - set(_AUGMENT_KEYS)
        if extras:
            raise ConfigError(f"unknown [augment] keys: {sorted(extras)}")
        enabled = _parse_bool(aug.get("enabled", "true"), "enabled")
        if enabled:
            kwargs = {"seed": seed}
            scale_lo = float(aug.get("resize_scale_lo", "0.8"))
            scale_hi = float(aug.get("resize_scale_hi", "1.0"))
            kwargs["resize_scale_range"] = (scale_lo, scale_hi)
            for key, conv in _AUGMENT_KEYS.items():
                if conv is not None and key in aug and not key.startswith("resize_scale"):
                    kwargs[key] = conv(aug[key])
            cfg.augmentation = data_mod.AugmentationPolicy(**kwargs)
    return cfg


def _load_bundle(cfg: ExperimentConfig):
    if cfg.data_dir:
        samples = data_mod.read_dataset(cfg.data_dir, image_size=cfg.image_size)
    else:
        synth_seed = cfg.seed if cfg.synth_seed is None else cfg.synth_seed
        samples = data_mod.synth_generate(cfg.synth_n, cfg.synth_positive_fraction,
                                          synth_seed, image_size=cfg.image_size)
    split = data_mod.split(samples, cfg.seed)
    bundle = (data_mod.select(samples, split.train),
              data_mod.select(samples, split.valid),
              data_mod.select(samples, split.test))
    return samples, split, bundle


def _prepare_out_dir(out_dir: str, overwrite: bool) -> None:
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        if not overwrite:
            raise DataError(f"output directory {out_dir} is not empty; pass --overwrite to replace it")
        shutil.rmtree(out_dir)
    os.makedirs(out_dir, exist_ok=True)


# ---------------------------------------------------------------------------
# commands

def _cmd_synth_data(args) -> int:
    out = args.out
    if os.path.isdir(out) and os.listdir(out):
        raise DataError(f"output directory {out} is not empty")
    samples = data_mod.synth_generate(args.n, args.positive_fraction, args.seed,
                                      image_size=args.image_size)
    data_mod.write_dataset(samples, out)
    print(f"dataset: {out}")
    print(f"metadata: {os.path.join(out, 'metadata.csv')}")
    return EXIT_OK


def _require_file(path, what: str) -> None:
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")


def _resolve_spec(cfg: ExperimentConfig) -> models_mod.ModelSpec:
    if cfg.spec_path:
        return models_mod.load_spec(cfg.spec_path)
    return models_mod.make_standard_spec(image_size=cfg.image_size)


def _cmd_train(args, transfer_required: bool, transfer_forbidden: bool) -> int:
    from_archive = getattr(args, "from_archive", None)
    if transfer_required and not from_archive:
        raise ConfigError("finetune requires --from-archive")
    if transfer_forbidden and from_archive:
        raise ConfigError("pretrain trains from scratch; --from-archive is not accepted")
    cfg = load_experiment_config(args.config)
    if args.n_runs is not None:
        cfg.n_runs = args.n_runs
    spec = _resolve_spec(cfg)
    if from_archive:
        _require_file(from_archive, "archive")
    transfer = archive_mod.WeightArchive.load(from_archive) if from_archive else None
    if transfer is not None:
        # surface archive/spec mismatches before any training happens
        archive_mod.load_with_new_head(transfer, spec, cfg.seed)

    _prepare_out_dir(args.out, args.overwrite)
    _, split, bundle = _load_bundle(cfg)
    data_mod.write_split(split, os.path.join(args.out, "split.csv"))
    models_mod.save_spec(spec, os.path.join(args.out, "spec.ini"))

    result = training_mod.multi_run(spec, bundle, cfg.train, n_runs=cfg.n_runs,
                                    transfer_archive=transfer,
                                    augmentation=cfg.augmentation,
                                    threshold=cfg.threshold)
    reports = []
    for i in range(cfg.n_runs):
        run_dir = os.path.join(args.out, f"run_{i:02d}")
        os.makedirs(run_dir, exist_ok=True)
        run = result.runs[i]
        if run is None:
            continue
        run.best_weights.save(os.path.join(run_dir, "weights.lsnbw"))
        training_mod.write_epoch_log(run.epoch_log, os.path.join(run_dir, "epochs.jsonl"))
        metrics_mod.write_report(result.reports[i], os.path.join(run_dir, "report.txt"))
        reports.append(result.reports[i])
        print(f"run {i}: stopped epoch {run.stopped_epoch}, best epoch {run.best_epoch}, "
              f"test auroc {result.reports[i].auroc:.4f}")
        print(f"report: {os.path.join(run_dir, 'report.txt')}")
    if len(reports) >= 2:
        agg = metrics_mod.aggregate(reports)
        agg_path = os.path.join(args.out, "aggregate.txt")
        metrics_mod.write_aggregate(agg, agg_path)
        print(f"aggregate auroc: {agg.means['auroc']:.4f} ± {agg.half_widths['auroc']:.4f} "
              f"(95% CI, n={agg.n_runs})")
        print(f"aggregate: {agg_path}")
    if result.failures:
        for index, message in result.failures:
            print(f"run {index} failed: {message}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def _load_eval_inputs(args):
    _require_file(args.spec, "spec")
    _require_file(args.archive, "archive")
    if not os.path.isdir(args.data_dir):
        raise DataError(f"data directory not found: {args.data_dir}")
    spec = models_mod.load_spec(args.spec)
    arch = archive_mod.WeightArchive.load(args.archive)
    model = archive_mod.load_model(arch, spec)
    size = spec.input_image_shape[1]
    samples = data_mod.read_dataset(args.data_dir, image_size=size)
    if args.split:
        split = data_mod.read_split(args.split)
        ids = getattr(split, args.partition)
        samples = data_mod.select(samples, ids)
    if not samples:
        raise DataError("no samples selected for evaluation")
    return model, samples


def _cmd_evaluate(args) -> int:
    model, samples = _load_eval_inputs(args)
    probs = models_mod.predict_proba(model, samples)
    labels = [s.label for s in samples]
    report = metrics_mod.evaluate_scores(probs, labels, args.threshold)
    metrics_mod.write_report(report, args.out)
    print(f"accuracy {report.accuracy:.4f}  auroc {report.auroc:.4f}  "
          f"auprc {report.auprc:.4f}  f1 {report.f1:.4f}  (n={report.n_test})")
    print(f"report: {args.out}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    model, samples = _load_eval_inputs(args)
    probs = models_mod.predict_proba(model, samples)
    labels = [s.label for s in samples]
    roc = metrics_mod.roc_points(probs, labels)
    pr = metrics_mod.pr_points(probs, labels)
    metrics_mod.write_curve(roc, args.out_roc, ("fpr", "tpr"))
    metrics_mod.write_curve(pr, args.out_pr, ("recall", "precision"))
    print(f"roc: {args.out_roc}")
    print(f"pr: {args.out_pr}")
    return EXIT_OK


def _read_run_reports(run_dir: str, metric: str) -> list:
    paths = sorted(glob.glob(os.path.join(run_dir, "run_*", "report.txt")))
    if len(paths) < 2:
        raise DataError(f"{run_dir} holds {len(paths)} run reports; compare needs at least 2")
    reports = [metrics_mod.read_report(p) for p in paths]
    if metric not in metrics_mod.METRIC_FIELDS:
        raise MetricError(f"unknown metric {metric!r}; choose from {metrics_mod.METRIC_FIELDS}")
    return [getattr(r, metric) for r in reports]


def _cmd_compare(args) -> int:
    a_values = _read_run_reports(args.a, args.metric)
    b_values = _read_run_reports(args.b, args.metric)
    agg_a = metrics_mod.aggregate([metrics_mod.read_report(p) for p in
                                   sorted(glob.glob(os.path.join(args.a, "run_*", "report.txt")))])
    agg_b = metrics_mod.aggregate([metrics_mod.read_report(p) for p in
                                   sorted(glob.glob(os.path.join(args.b, "run_*", "report.txt")))])
    sig = metrics_mod.one_tailed_t_test(a_values, b_values)
    stars = "**" if sig.p_one_tailed < 0.001 else ("*" if sig.p_one_tailed < 0.05 else "")
    for label, agg in (("a", agg_a), ("b", agg_b)):
        print(f"{label} {args.metric}: {agg.means[args.metric]:.4f} ± "
              f"{agg.half_widths[args.metric]:.4f} (95% CI, n={agg.n_runs})")
    print(f"t = {sig.t_statistic:.4f}, df = {sig.degrees_freedom:.2f}, "
          f"one-tailed p = {sig.p_one_tailed:.6f}{stars}")
    print(f"favored: {sig.direction}")
    return EXIT_OK if sig.p_one_tailed < 0.05 else EXIT_NOT_SIGNIFICANT


def _cmd_attribute(args) -> int:
    model, samples = _load_eval_inputs(args)
    if args.ids:
        wanted = args.ids.split(",")
        samples = data_mod.select(samples, wanted)
    elif args.limit is not None:
        samples = samples[:args.limit]
    _prepare_out_dir(args.out, args.overwrite)
    summary_lines = ["id,psi_delta,completeness_gap,steps_used\n"]
    for sample in samples:
        amap = attr_mod.integrated_gradients(model, sample, steps=args.steps)
        rendered = attr_mod.render_map(amap, mode=args.mode)
        attr_mod.write_pgm(rendered, os.path.join(args.out, f"{sample.id}.pgm"))
        if args.dump_phi:
            attr_mod.dump_phi(amap, os.path.join(args.out, f"{sample.id}.phi.lsnbw"))
        summary_lines.append(f"{sample.id},{amap.psi_delta!r},{amap.completeness_gap!r},"
                             f"{amap.steps_used}\n")
    summary_path = os.path.join(args.out, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(summary_lines)
    print(f"maps: {args.out}")
    print(f"summary: {summary_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring

def _add_eval_args(p) -> None:
    p.add_argument("--archive", required=True, help="weight archive (.lsnbw)")
    p.add_argument("--spec", required=True, help="model spec file")
    p.add_argument("--data-dir", required=True, help="dataset directory (images/ + metadata.csv)")
    p.add_argument("--split", default=None, help="split.csv restricting evaluation")
    p.add_argument("--partition", default="test", choices=("train", "valid", "test"))


def build_parser() -> _Parser:
    parser = _Parser(prog="lesionbench",
                     description="melanoma-classification benchmark harness")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write a synthetic dataset directory")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--positive-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=40)

    for name, help_text in (("pretrain", "train the source model from scratch"),
                            ("train", "train from scratch (the control arm)"),
                            ("finetune", "train starting from a weight archive")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", required=True, help="output directory for run artifacts")
        p.add_argument("--n-runs", type=int, default=None, help="override config n_runs")
        p.add_argument("--overwrite", action="store_true")
        if name == "finetune":
            p.add_argument("--from-archive", required=True, help="pretrained weight archive")

    p = sub.add_parser("evaluate", help="score an archive on a dataset")
    _add_eval_args(p)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="report file to write")

    p = sub.add_parser("curves", help="export ROC and PR points")
    _add_eval_args(p)
    p.add_argument("--out-roc", required=True)
    p.add_argument("--out-pr", required=True)

    p = sub.add_parser("compare", help="one-tailed t-test between two run directories (H1: b > a)")
    p.add_argument("--a", required=True, help="baseline run directory")
    p.add_argument("--b", required=True, help="candidate run directory")
    p.add_argument("--metric", default="auroc")

    p = sub.add_parser("attribute", help="integrated-gradients maps for test samples")
    _add_eval_args(p)
    p.add_argument("--ids", default=None, help="comma-separated sample ids")
    p.add_argument("--limit", type=int, default=None, help="first K selected samples")
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--mode", default="absolute", choices=("absolute", "signed"))
    p.add_argument("--dump-phi", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "synth-data":
            return _cmd_synth_data(args)
        if args.command == "pretrain":
            return _cmd_train(args, transfer_required=False, transfer_forbidden=True)
        if args.command == "train":
            return _cmd_train(args, transfer_required=False, transfer_forbidden=False)
        if args.command == "finetune":
            return _cmd_train(args, transfer_required=True, transfer_forbidden=False)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "curves":
            return _cmd_curves(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "attribute":
            return _cmd_attribute(args)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except _SCHEMA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LesionbenchError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entry() -> None:
    sys.exit(main())
