"""
Mini-batch SGD for feature-convex classifiers.

Loss per batch: BCE(g(phi(x)), y) + lambda * q * ((g(z + eps u) - g(z)) / eps)^2
with u uniform on the unit sphere, one fresh direction per sample and step.
Clean and perturbed features go through one tape as a stacked batch and the
loss derivative w.r.t. each logit seeds a weighted sum, so the penalty needs
no second-order differentiation.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import roc_curve
from sklearn.model_selection import train_test_split

from certify import FeatureConvexClassifier
from data import Dataset, augment_batch
from errors import ConfigurationError, NumericError
from evaluation import class_accuracies
from featuremap import FeatureMap, feature_apply
from icnn import IcnnParams, IcnnSpec, icnn_init, icnn_logits, logit_graph, project_nonnegative
from tensorcore import Var, evaluate, gradient

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.001
    momentum: float = 0.9
    lr_decay_gamma: float = 0.99
    jacobian_lambda: float = 0.01
    jacobian_fd_step: float = 0.01
    seed: int = 0
    augment: bool = False
    augment_pad: int = 1
    val_fraction: float = 0.2
    hidden_dims: Tuple[int, ...] = (200, 50)
    passthrough: bool = True
    feature_map: str = "mean_offset_abs_concat"
    log_every: int = 1

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            problems.append("momentum must be in [0, 1)")
        if not 0 < self.lr_decay_gamma <= 1:
            problems.append("lr_decay_gamma must be in (0, 1]")
        if self.jacobian_lambda < 0:
            problems.append("jacobian_lambda must be >= 0")
        if not self.jacobian_fd_step > 0:
            problems.append("jacobian_fd_step must be > 0")
        if not 0 <= self.val_fraction < 1:
            problems.append("val_fraction must be in [0, 1)")
        if self.augment_pad < 0:
            problems.append("augment_pad must be >= 0")
        if problems:
            raise ConfigurationError("invalid training config: " + "; ".join(problems))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {unknown}")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc


@dataclass
class TrainHistory:
    loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_balanced_acc: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def record(self, loss: float, train_acc: float, val_balanced_acc: float, lr: float) -> None:
        self.loss.append(loss)
        self.train_acc.append(train_acc)
        self.val_balanced_acc.append(val_balanced_acc)
        self.lr.append(lr)


def history_frame(history: TrainHistory) -> pd.DataFrame:
    return pd.DataFrame({
        "epoch": np.arange(1, len(history) + 1),
        "loss": history.loss,
        "train_acc": history.train_acc,
        "val_balanced_acc": history.val_balanced_acc,
        "lr": history.lr,
    })


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def _bce_terms(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    sign = np.where(np.asarray(labels) == 1, -1.0, 1.0)
    return np.logaddexp(0.0, sign * logits)


def bce_loss(logit: float, label: int) -> float:
    """-log sigmoid(logit) for label 1, -log(1 - sigmoid(logit)) for label 2."""
    if label not in (1, 2):
        raise ConfigurationError(f"label must be 1 or 2, got {label}")
    return float(_bce_terms(np.array([logit]), np.array([label]))[0])


def _sigmoid(values: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -values))


def random_unit_vectors(rng: np.random.Generator, n: int, q: int) -> np.ndarray:
    directions = rng.standard_normal((n, q))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def jacobian_penalty(clf: FeatureConvexClassifier, x: Any, eps: float, rng: np.random.Generator) -> float:
    """Finite-difference estimate q * (directional derivative)^2 of ||grad g||^2, averaged over rows."""
    if not eps > 0:
        raise ConfigurationError(f"jacobian fd step must be > 0, got {eps}")
    z = feature_apply(clf.feature_map, x)
    if z.ndim == 1:
        z = z[None, :]
    n, q = z.shape
    u = random_unit_vectors(rng, n, q)
    base = icnn_logits(clf.params, z).astype(np.float64)
    moved = icnn_logits(clf.params, (z + eps * u).astype(np.float32)).astype(np.float64)
    return float(np.mean(q * ((moved - base) / eps) ** 2))


def loss_and_gradients(params: IcnnParams, fmap: FeatureMap, X: np.ndarray, labels: np.ndarray,
                       config: TrainConfig, rng: np.random.Generator) -> Tuple[float, Dict[str, np.ndarray]]:
    z = feature_apply(fmap, X)
    n, q = z.shape
    lam, eps = config.jacobian_lambda, config.jacobian_fd_step
    if lam > 0:
        stacked = np.concatenate([z, (z + eps * random_unit_vectors(rng, n, q)).astype(np.float32)])
    else:
        stacked = z

    outputs, tape = evaluate(logit_graph(params.spec), [stacked], params.weights, params.dtype)
    logits = outputs[0][:, 0].astype(np.float64)
    clean = logits[:n]

    targets = (np.asarray(labels) == 1).astype(np.float64)
    loss = float(np.mean(_bce_terms(clean, labels)))
    seed_weights = np.zeros_like(logits)
    seed_weights[:n] = (_sigmoid(clean) - targets) / n
    if lam > 0:
        slope = (logits[n:] - clean) / eps
        loss += lam * float(np.mean(q * slope ** 2))
        coeff = lam * 2.0 * q * slope / (eps * n)
        seed_weights[:n] -= coeff
        seed_weights[n:] = coeff

    logit_var = Var(tape, tape.output_ids[0])
    total = tape.weighted_sum(logit_var, seed_weights.reshape(logit_var.shape))
    tape.output_ids.append(total.id)
    grads = gradient(tape, len(tape.output_ids) - 1)
    return loss, grads.params


# ---------------------------------------------------------------------------
# Threshold balancing
# ---------------------------------------------------------------------------

def balance_threshold(logits: Any, labels: Any) -> float:
    """tau minimizing |TPR - (1 - FPR)| over thresholds at midpoints of sorted distinct logits.

    Sentinels min - 1 and max + 1 stand in for -inf/+inf thresholds. Ties go to
    the larger tau.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if logits.shape != labels.shape:
        raise ConfigurationError("logits and labels differ in length")
    positive = labels == 1
    n1, n2 = int(positive.sum()), int((~positive).sum())
    if n1 == 0 or n2 == 0:
        raise ConfigurationError(f"balancing needs both classes (class 1: {n1}, class 2: {n2})")

    fpr, tpr, roc_thresholds = roc_curve(positive, logits, drop_intermediate=False)
    distinct = np.unique(logits)
    # roc thresholds are distinct scores (plus one above the max); "score >= s_k" == "score > midpoint below s_k"
    position = np.searchsorted(distinct, roc_thresholds)
    below = np.concatenate([[distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2.0])
    cut = np.where(position >= len(distinct), distinct[-1] + 1.0, below[np.minimum(position, len(distinct) - 1)])

    true_pos = np.rint(tpr * n1).astype(np.int64)
    true_neg = n2 - np.rint(fpr * n2).astype(np.int64)
    imbalance = np.abs(true_pos * n2 - true_neg * n1)
    best = imbalance == imbalance.min()
    return float(-cut[best].min())


def balanced_accuracy(clf: FeatureConvexClassifier, dataset: Dataset) -> float:
    alpha1, alpha2 = class_accuracies(clf.predict_batch(dataset.inputs), dataset.labels)
    return 0.5 * (alpha1 + alpha2)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def split_train_val(labels: np.ndarray, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stratified split of sample indices."""
    indices = np.arange(len(labels))
    if val_fraction == 0:
        return indices, np.array([], dtype=np.int64)
    try:
        train_idx, val_idx = train_test_split(indices, test_size=val_fraction, stratify=labels,
                                              random_state=seed)
    except ValueError as exc:
        raise ConfigurationError(f"cannot split dataset for validation: {exc}") from exc
    return np.sort(train_idx), np.sort(val_idx)


def _balanced_val_accuracy(params: IcnnParams, fmap: FeatureMap, val: Optional[Dataset]) -> Tuple[float, float]:
    """(tau, balanced accuracy) on the validation split; nan accuracy without one."""
    if val is None or len(val) == 0:
        return 0.0, float("nan")
    logits = icnn_logits(params, feature_apply(fmap, val.inputs))
    tau = balance_threshold(logits, val.labels)
    predictions = np.where(logits.astype(np.float64) + tau > 0, 1, 2)
    alpha1, alpha2 = class_accuracies(predictions, val.labels)
    return tau, 0.5 * (alpha1 + alpha2)


def train(spec: IcnnSpec, feature_map: FeatureMap, dataset: Dataset,
          config: TrainConfig) -> Tuple[FeatureConvexClassifier, TrainHistory]:
    """Fit the network, then set tau by balancing clean accuracies on the validation split."""
    try:
        dataset.require_binary()
    except ConfigurationError as exc:
        raise ConfigurationError(f"training data unusable: {exc}") from exc
    if spec.input_dim != feature_map.output_dim:
        raise ConfigurationError(
            f"network input dim {spec.input_dim} != feature dim {feature_map.output_dim}")
    if config.augment and dataset.image_shape is None:
        raise ConfigurationError("augmentation needs image data (dataset has no image_shape)")

    train_idx, val_idx = split_train_val(dataset.labels, config.val_fraction, config.seed)
    train_set = dataset.subset(train_idx, split="train")
    val_set = dataset.subset(val_idx, split="val") if len(val_idx) else None

    rng = np.random.default_rng(config.seed)
    params = project_nonnegative(icnn_init(spec))
    velocity = {name: np.zeros_like(w) for name, w in params.weights.items()}
    lr = config.learning_rate
    history = TrainHistory()

    logger.info("Training %s on %d samples (%d val), %d epochs", spec.hidden_dims, len(train_set),
                len(val_idx), config.epochs)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses, sizes = [], []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            X = train_set.inputs[batch]
            if config.augment:
                X = augment_batch(X, train_set.image_shape, config.augment_pad, rng)
            loss, grads = loss_and_gradients(params, feature_map, X, train_set.labels[batch], config, rng)
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch} (loss {loss}); lower the learning rate")
            updated = {}
            for name, weight in params.weights.items():
                velocity[name] = config.momentum * velocity[name] + grads[name]
                updated[name] = (weight - lr * velocity[name]).astype(weight.dtype)
            params = project_nonnegative(params.replace(updated))
            losses.append(loss)
            sizes.append(len(batch))

        train_logits = icnn_logits(params, feature_apply(feature_map, train_set.inputs))
        train_acc = float(np.mean(np.where(train_logits > 0, 1, 2) == train_set.labels))
        _, val_bal = _balanced_val_accuracy(params, feature_map, val_set)
        epoch_loss = float(np.average(losses, weights=sizes))
        history.record(epoch_loss, train_acc, val_bal, lr)
        if epoch % max(config.log_every, 1) == 0 or epoch == config.epochs:
            logger.info("Epoch %d/%d | loss %.4f | train acc %.4f | val bal acc %.4f | lr %.3e",
                        epoch, config.epochs, epoch_loss, train_acc, val_bal, lr)
        lr *= config.lr_decay_gamma

    balance_set = val_set if val_set is not None else train_set
    tau, _ = _balanced_val_accuracy(params, feature_map, balance_set)
    logger.info("Balanced threshold tau = %.6g on the %s split", tau, balance_set.split)
    return FeatureConvexClassifier(feature_map, params, tau), history
