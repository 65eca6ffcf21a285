#!/usr/bin/env python3
"""
Command-line entry point.

    python cli.py train --dataset ring --epochs 200
    python cli.py certify --model runs/model.fcc --dataset ring
    python cli.py bound --M 2 --N 2 --d-max 4

Every run writes config.json (resolved configuration) and metadata.json
(timestamps, elapsed time) next to its CSV/JSON outputs, plus run.log.
Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
"""

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from certify import (FeatureConvexClassifier, certificates_frame, certify_batch, load_classifier,
                     measure_certification_time, save_classifier)
from data import Dataset, load_dataset_csv, load_mnist_pair, make_linear_toy, make_ring
from errors import ConfigurationError, FeatureConvexError
from evaluation import (certified_accuracy_curve, clean_accuracies, curve_frame, default_tau_grid,
                        median_radius, robustness_surface, soundness_audit)
from featuremap import SUPPORTED_NORMS, feature_map_from_dataset, norm_label, parse_norm
from icnn import IcnnSpec
from separability import (is_convexly_separable, monte_carlo_separability,
                          separation_probability_bound)
from settings import default_mnist_dir, resolve_output_dir, setup_logger, worker_count
from train import TrainConfig, TrainHistory, history_frame, split_train_val, train

logger = logging.getLogger("cli")

COMMANDS = ("train", "certify", "curve", "surface", "separability", "bound", "attack", "sweep")
DATASETS = ("ring", "linear", "csv", "mnist")
MODEL_COMMANDS = ("certify", "curve", "surface", "attack")


@dataclass
class RunConfig:
    command: str = "train"
    dataset: str = "ring"
    csv: Optional[str] = None
    mnist_dir: Optional[str] = None
    classes: List[int] = field(default_factory=lambda: [3, 8])
    digits: List[int] = field(default_factory=lambda: list(range(10)))
    split: Optional[str] = None
    n_inner: int = 100
    n_outer: int = 100
    r_inner: float = 0.4
    r_ring: float = 1.0
    noise: float = 0.0
    sensitive: str = "inner"
    n_per_class: int = 50
    max_points: Optional[int] = None
    model: Optional[str] = None
    norms: List[str] = field(default_factory=lambda: ["1", "2", "inf"])
    radii: Optional[List[float]] = None
    radius_max: Optional[float] = None
    radius_steps: int = 50
    taus: Optional[List[float]] = None
    tau_count: int = 41
    tol: float = 1e-6
    M: int = 2
    N: int = 2
    d_max: int = 6
    trials: int = 0
    factor: float = 0.999
    steps: int = 50
    restarts: int = 5
    min_logit: float = 0.0
    output_dir: str = "runs"
    seed: int = 0
    threads: Optional[int] = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["train"] = self.train.to_dict()
        return data

    @classmethod
    def from_sources(cls, command: str, file_data: Mapping[str, Any], flag_data: Mapping[str, Any]) -> "RunConfig":
        """Defaults < config file < flags."""
        known = {f.name for f in fields(cls)}
        train_keys = {f.name for f in fields(TrainConfig)}
        merged: Dict[str, Any] = {}
        train_data: Dict[str, Any] = {}
        for source in (file_data, flag_data):
            for key, value in source.items():
                if key == "train":
                    if not isinstance(value, Mapping):
                        raise ConfigurationError("'train' must be a JSON object")
                    train_data.update(value)
                elif key in train_keys and key not in known:
                    train_data[key] = value
                elif key in known:
                    merged[key] = value
                else:
                    raise ConfigurationError(f"unknown configuration key {key!r}")
        merged["command"] = command
        if not merged.get("mnist_dir"):
            merged["mnist_dir"] = default_mnist_dir()
        if "seed" in merged:
            train_data.setdefault("seed", merged["seed"])
        if "feature_map" not in train_data:
            on_mnist = command == "sweep" or merged.get("dataset", cls.dataset) == "mnist"
            train_data["feature_map"] = "identity" if on_mnist else TrainConfig.feature_map
        merged["train"] = TrainConfig.from_dict(train_data)
        config = cls(**merged)
        config.validate()
        return config

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown subcommand {self.command!r}")
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.command in MODEL_COMMANDS and not self.model:
            raise ConfigurationError(f"'{self.command}' needs --model")
        if self.dataset == "csv" and not self.csv and self.command not in ("bound",):
            raise ConfigurationError("dataset 'csv' needs --csv")
        if (self.dataset == "mnist" or self.command == "sweep") and not self.mnist_dir:
            raise ConfigurationError(f"'{self.command}' on MNIST needs --mnist-dir")
        if len(self.classes) < 2 or len(set(self.classes)) != len(self.classes):
            raise ConfigurationError(f"classes must list distinct labels, got {self.classes}")
        if len(self.digits) < 2 or len(set(self.digits)) != len(self.digits):
            raise ConfigurationError(f"digits must list at least two distinct labels, got {self.digits}")
        for p in self.norms:
            parse_norm(p)
        if self.radii is not None:
            if not self.radii or self.radii[0] != 0 or any(b < a for a, b in zip(self.radii, self.radii[1:])):
                raise ConfigurationError("radii must ascend from 0")
        if self.M < 1 or self.N < 1 or self.d_max < 1:
            raise ConfigurationError("bound needs M, N, d-max >= 1")
        if not 0 < self.factor <= 1:
            raise ConfigurationError("factor must be in (0, 1]")
        if self.max_points is not None and self.max_points < 1:
            raise ConfigurationError("max-points must be >= 1")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file (flags override it)")
    sub.add_argument("--output-dir", dest="output_dir", help="output directory (FCC_OUTPUT_DIR overrides)")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threads", type=int, help="worker pool size (default: all cores)")


def _add_data(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--dataset", choices=DATASETS)
    sub.add_argument("--csv", help="CSV dataset (label, then feature columns)")
    sub.add_argument("--mnist-dir", dest="mnist_dir", help="directory with the four MNIST IDX files")
    sub.add_argument("--classes", type=int, nargs="+", help="class pair: sensitive class first")
    sub.add_argument("--split", choices=["train", "test"])
    sub.add_argument("--n-inner", dest="n_inner", type=int)
    sub.add_argument("--n-outer", dest="n_outer", type=int)
    sub.add_argument("--r-inner", dest="r_inner", type=float)
    sub.add_argument("--r-ring", dest="r_ring", type=float)
    sub.add_argument("--noise", type=float)
    sub.add_argument("--sensitive", choices=["inner", "outer"])
    sub.add_argument("--n-per-class", dest="n_per_class", type=int)


def _add_training(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--lr", dest="learning_rate", type=float)
    sub.add_argument("--momentum", type=float)
    sub.add_argument("--gamma", dest="lr_decay_gamma", type=float)
    sub.add_argument("--jacobian-lambda", dest="jacobian_lambda", type=float)
    sub.add_argument("--jacobian-fd-step", dest="jacobian_fd_step", type=float)
    sub.add_argument("--hidden", dest="hidden_dims", type=int, nargs="+")
    sub.add_argument("--no-passthrough", dest="passthrough", action="store_false")
    sub.add_argument("--feature-map", dest="feature_map", choices=["identity", "mean_offset_abs_concat"],
                     help="default: identity on MNIST, mean_offset_abs_concat otherwise")
    sub.add_argument("--augment", action="store_true")
    sub.add_argument("--val-fraction", dest="val_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description="Feature-convex classifiers with closed-form certificates",
                     argument_default=argparse.SUPPRESS)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub = subs.add_parser("train", help="fit, balance tau, save the model", argument_default=argparse.SUPPRESS)
    _add_common(sub)
    _add_data(sub)
    _add_training(sub)
    sub.add_argument("--model", help="where to save the model (default: <output-dir>/model.fcc)")

    sub = subs.add_parser("certify", help="certificate CSV for a dataset", argument_default=argparse.SUPPRESS)
    _add_common(sub)
    _add_data(sub)
    sub.add_argument("--model")
    sub.add_argument("--norms", nargs="+")

    for name, text in (("curve", "certified accuracy vs radius at the model's tau"),
                       ("surface", "certified accuracy over radius and tau")):
        sub = subs.add_parser(name, help=text, argument_default=argparse.SUPPRESS)
        _add_common(sub)
        _add_data(sub)
        sub.add_argument("--model")
        sub.add_argument("--norms", nargs="+")
        sub.add_argument("--radii", type=float, nargs="+")
        sub.add_argument("--radius-max", dest="radius_max", type=float)
        sub.add_argument("--radius-steps", dest="radius_steps", type=int)
        if name == "surface":
            sub.add_argument("--taus", type=float, nargs="+")
            sub.add_argument("--tau-count", dest="tau_count", type=int)
            sub.add_argument("--val-fraction", dest="val_fraction", type=float)

    sub = subs.add_parser("separability", help="convex separability report of class 1 vs class 2",
                          argument_default=argparse.SUPPRESS)
    _add_common(sub)
    _add_data(sub)
    sub.add_argument("--tol", type=float)
    sub.add_argument("--max-points", dest="max_points", type=int, help="cap on class-1 points to reconstruct")

    sub = subs.add_parser("bound", help="separation probability bound table", argument_default=argparse.SUPPRESS)
    _add_common(sub)
    sub.add_argument("--M", dest="M", type=int)
    sub.add_argument("--N", dest="N", type=int)
    sub.add_argument("--d-max", dest="d_max", type=int)
    sub.add_argument("--trials", type=int, help="Monte-Carlo trials per row (0 = bound only)")

    sub = subs.add_parser("attack", help="PGD soundness audit at a fraction of each radius",
                          argument_default=argparse.SUPPRESS)
    _add_common(sub)
    _add_data(sub)
    sub.add_argument("--model")
    sub.add_argument("--norms", nargs="+")
    sub.add_argument("--factor", type=float)
    sub.add_argument("--steps", type=int)
    sub.add_argument("--restarts", type=int)
    sub.add_argument("--min-logit", dest="min_logit", type=float)

    sub = subs.add_parser("sweep", help="train and certify every ordered MNIST class pair",
                          argument_default=argparse.SUPPRESS)
    _add_common(sub)
    _add_data(sub)
    _add_training(sub)
    sub.add_argument("--digits", type=int, nargs="+", help="labels to pair up (default: 0-9)")
    return parser


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    data.pop("command", None)
    return data


def parse_run_config(argv: Sequence[str]) -> RunConfig:
    namespace = vars(build_parser().parse_args(list(argv)))
    command = namespace.pop("command")
    file_data = _load_config_file(namespace.pop("config", None))
    return RunConfig.from_sources(command, file_data, namespace)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def load_run_dataset(cfg: RunConfig, split: str) -> Dataset:
    if cfg.dataset == "mnist":
        dataset = load_mnist_pair(cfg.mnist_dir, cfg.classes[0], cfg.classes[1], split)
    elif cfg.dataset == "csv":
        dataset = load_dataset_csv(cfg.csv, split=split)
    elif cfg.dataset == "ring":
        dataset = make_ring(cfg.n_inner, cfg.n_outer, cfg.r_inner, cfg.r_ring, cfg.noise,
                            seed=cfg.seed + (0 if split == "train" else 1), sensitive=cfg.sensitive)
    else:
        dataset = make_linear_toy(cfg.n_per_class, seed=cfg.seed + (0 if split == "train" else 1))
    return dataset


def _radius_grid(cfg: RunConfig, finite_radii: np.ndarray) -> np.ndarray:
    if cfg.radii is not None:
        return np.asarray(cfg.radii, dtype=np.float64)
    top = cfg.radius_max
    if top is None:
        top = float(finite_radii.max()) if finite_radii.size and finite_radii.max() > 0 else 1.0
    return np.linspace(0.0, top, max(cfg.radius_steps, 2))


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False)
    print(f"💾 Wrote {path}")


def _json_safe(value: Any) -> Any:
    """NaN becomes null and infinities become "inf"/"-inf" strings, as in the CSV outputs."""
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
    return value


def _write_json(data: Any, path: Path) -> None:
    text = json.dumps(_json_safe(data), indent=2, sort_keys=True, default=str, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _model_path(cfg: RunConfig, out_dir: Path) -> Path:
    return Path(cfg.model) if cfg.model else out_dir / "model.fcc"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _fit(cfg: RunConfig, dataset: Dataset) -> Tuple[FeatureConvexClassifier, TrainHistory]:
    fmap = feature_map_from_dataset(cfg.train.feature_map, dataset.inputs)
    spec = IcnnSpec(fmap.output_dim, cfg.train.hidden_dims, cfg.train.passthrough, cfg.train.seed)
    clf, history = train(spec, fmap, dataset, cfg.train)
    return clf, history


def cmd_train(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    dataset = load_run_dataset(cfg, cfg.split or "train")
    print(f"🚀 Training on {len(dataset)} samples ({dataset.provenance})")
    clf, history = _fit(cfg, dataset)
    model_path = _model_path(cfg, out_dir)
    save_classifier(clf, model_path)
    _write_csv(history_frame(history), out_dir / "history.csv")
    alpha1, alpha2 = clean_accuracies(clf, dataset)
    _write_json({"tau": clf.tau, "alpha1": alpha1, "alpha2": alpha2, "model": str(model_path),
                 "final_val_balanced_acc": history.val_balanced_acc[-1]}, out_dir / "summary.json")
    print(f"✅ Model saved to {model_path} (tau={clf.tau:.6g}, alpha1={alpha1:.4f}, alpha2={alpha2:.4f})")
    return 0


def cmd_certify(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    clf = load_classifier(cfg.model)
    dataset = load_run_dataset(cfg, cfg.split or "test")
    norms = [parse_norm(p) for p in cfg.norms]
    print(f"🔐 Certifying {len(dataset)} inputs for norms {[norm_label(p) for p in norms]}")
    certs = certify_batch(clf, dataset.inputs, norms, threads=cfg.threads)
    _write_csv(certificates_frame(certs, dataset.labels), out_dir / "certificates.csv")
    summary = {f"median_radius_{norm_label(p)}": median_radius(certs, p, dataset.labels) for p in norms}
    _write_json(summary, out_dir / "summary.json")
    timed = dataset.inputs[: min(len(dataset), 1000)]
    meta["seconds_per_input"] = measure_certification_time(clf, timed, norms[0]) if len(timed) else None
    print("✅ Certificates written")
    return 0


def cmd_curve(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    clf = load_classifier(cfg.model)
    dataset = load_run_dataset(cfg, cfg.split or "test")
    for p in (parse_norm(q) for q in cfg.norms):
        certs = certify_batch(clf, dataset.inputs, [p], threads=cfg.threads)
        finite = np.array([c.radii[p] for c in certs if math.isfinite(c.radii[p])])
        radii = _radius_grid(cfg, finite)
        points = certified_accuracy_curve(clf, dataset, p, radii, certs=certs)
        _write_csv(curve_frame(points), out_dir / f"curve_{norm_label(p)}.csv")
    print("✅ Certified accuracy curves written")
    return 0


def _validation_logits(cfg: RunConfig, clf: FeatureConvexClassifier) -> np.ndarray:
    train_set = load_run_dataset(cfg, "train")
    _, val_idx = split_train_val(train_set.labels, cfg.train.val_fraction or 0.2, cfg.train.seed)
    return clf.raw_logits(train_set.inputs[val_idx])


def cmd_surface(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    clf = load_classifier(cfg.model)
    dataset = load_run_dataset(cfg, cfg.split or "test")
    tau_logits = None if cfg.taus is not None else _validation_logits(cfg, clf)
    for p in (parse_norm(q) for q in cfg.norms):
        certs = certify_batch(clf, dataset.inputs, [p], threads=cfg.threads)
        finite = np.array([c.radii[p] for c in certs if math.isfinite(c.radii[p])])
        radii = _radius_grid(cfg, finite)
        tau_grid = cfg.taus
        if tau_grid is None:
            tau_grid = default_tau_grid(tau_logits, cfg.tau_count)
        grid = robustness_surface(clf, dataset, p, tau_grid, radii, threads=cfg.threads)
        _write_csv(grid.to_frame(), out_dir / f"surface_{norm_label(p)}.csv")
    print("✅ Robustness surfaces written")
    return 0


def cmd_separability(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    dataset = load_run_dataset(cfg, cfg.split or "train")
    X1, X2 = dataset.class_inputs(1), dataset.class_inputs(2)
    if cfg.max_points is not None:
        X1 = X1[: cfg.max_points]
    print(f"📐 Reconstructing {len(X1)} class-1 points from {len(X2)} class-2 points")
    report = is_convexly_separable(X1, X2, tol=cfg.tol, threads=cfg.threads)
    _write_csv(report.to_frame(), out_dir / "separability.csv")
    summary = {"M": len(X1), "N": len(X2), "d": dataset.dim, "separable": report.separable,
               "min_error": report.min_error, "witness": report.witness, "tol": cfg.tol}
    _write_json(summary, out_dir / "separability.json")
    verdict = "separable" if report.separable else f"not separable (witness {report.witness})"
    print(f"✅ Convexly {verdict}; min reconstruction error {report.min_error:.6g}")
    return 0


def cmd_bound(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    rows = []
    for d in range(1, cfg.d_max + 1):
        row = {"M": cfg.M, "N": cfg.N, "d": d, "bound": separation_probability_bound(cfg.M, cfg.N, d)}
        if cfg.trials > 0:
            row["trials"] = cfg.trials
            row["frequency"] = monte_carlo_separability(cfg.M, cfg.N, d, cfg.trials, seed=cfg.seed + d,
                                                        threads=cfg.threads)
        rows.append(row)
    frame = pd.DataFrame(rows)
    print(frame.to_string(index=False))
    _write_csv(frame, out_dir / "bound.csv")
    _write_json({"M": cfg.M, "N": cfg.N, "d_max": cfg.d_max, "trials": cfg.trials,
                 "rows": frame.to_dict(orient="records")}, out_dir / "bound.json")
    return 0


def cmd_attack(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    clf = load_classifier(cfg.model)
    dataset = load_run_dataset(cfg, cfg.split or "test")
    reports = []
    for p in (parse_norm(q) for q in cfg.norms):
        print(f"🗡️ Attacking certified points at {cfg.factor} x radius ({norm_label(p)})")
        report = soundness_audit(clf, dataset.inputs, p, factor=cfg.factor, steps=cfg.steps,
                                 restarts=cfg.restarts, seed=cfg.seed, threads=cfg.threads,
                                 min_logit=cfg.min_logit)
        reports.append(report.to_dict())
        print(f"   {report.successes} successes out of {report.attacked} attacks")
    _write_json({"reports": reports}, out_dir / "attack.json")
    failures = sum(r["successes"] for r in reports)
    if failures:
        _report_error("SoundnessAuditFailed", f"{failures} certified points were flipped")
        return 1
    print("✅ No certified point was flipped")
    return 0


def cmd_sweep(cfg: RunConfig, out_dir: Path, meta: Dict[str, Any]) -> int:
    rows = []
    for class_a in cfg.digits:
        for class_b in cfg.digits:
            if class_a == class_b:
                continue
            print(f"🔁 Pair ({class_a}, {class_b})")
            pair_cfg = replace(cfg, dataset="mnist", classes=[class_a, class_b])
            train_set = load_run_dataset(pair_cfg, "train")
            clf, _ = _fit(pair_cfg, train_set)
            test_set = load_run_dataset(pair_cfg, "test")
            alpha1, alpha2 = clean_accuracies(clf, test_set)
            certs = certify_batch(clf, test_set.inputs, SUPPORTED_NORMS, threads=cfg.threads)
            row = {"class_a": class_a, "class_b": class_b, "alpha1": alpha1, "alpha2": alpha2}
            for p in SUPPORTED_NORMS:
                row[f"median_radius_{norm_label(p)}"] = median_radius(certs, p, test_set.labels)
            rows.append(row)
    _write_csv(pd.DataFrame(rows), out_dir / "sweep.csv")
    return 0


HANDLERS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "curve": cmd_curve,
    "surface": cmd_surface,
    "separability": cmd_separability,
    "bound": cmd_bound,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
}


def _report_error(kind: str, message: str) -> None:
    print("error: " + json.dumps({"kind": kind, "message": message}), file=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_run_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except FeatureConvexError as exc:
        _report_error(type(exc).__name__, str(exc))
        return 2

    out_dir = resolve_output_dir(cfg.output_dir)
    cfg.output_dir = str(out_dir)
    setup_logger(out_dir)
    _write_json(cfg.to_dict(), out_dir / "config.json")
    started = time.time()
    meta: Dict[str, Any] = {"command": cfg.command, "started": datetime.now().isoformat(),
                            "threads": worker_count(cfg.threads)}
    logger.info("Running %s (output %s)", cfg.command, out_dir)
    try:
        code = HANDLERS[cfg.command](cfg, out_dir, meta)
    except ConfigurationError as exc:
        _report_error(type(exc).__name__, str(exc))
        code = 2
    except (FeatureConvexError, OSError) as exc:
        logger.exception("%s failed", cfg.command)
        _report_error(type(exc).__name__, str(exc))
        print(f"❌ {cfg.command} failed: {exc}")
        code = 1
    meta["finished"] = datetime.now().isoformat()
    meta["elapsed_seconds"] = round(time.time() - started, 3)
    meta["exit_code"] = code
    _write_json(meta, out_dir / "metadata.json")
    return code


if __name__ == "__main__":
    sys.exit(run())
