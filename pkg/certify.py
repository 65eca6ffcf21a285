"""
Feature-convex classifier f_tau and its closed-form certificates.

f_tau(x) = 1 if g(phi(x)) + tau > 0 else 2. For a class-1 prediction no
perturbation with ||delta||_p below

    r(x) = (g(phi(x)) + tau) / (Lip_p(phi) * ||grad g(phi(x))||_{p,*})

can flip the prediction; class-2 predictions get radius 0.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import ConfigurationError, ModelFormatError, NumericError, RejectedInputError
from featuremap import (CONCAT, SUPPORTED_NORMS, FeatureMap, Norm, feature_apply,
                        feature_lipschitz, norm_label, parse_norm)
from icnn import (IcnnParams, icnn_input_gradients, icnn_logits, icnn_tensors,
                  params_from_file, read_model_file, write_model_file)
from settings import worker_count

logger = logging.getLogger(__name__)

TOL_GRAD = 1e-12
CERTIFICATE_COLUMNS = ["index", "true_class", "predicted_class", "logit",
                       "radius_l1", "radius_l2", "radius_linf"]


@dataclass(frozen=True)
class FeatureConvexClassifier:
    feature_map: FeatureMap
    params: IcnnParams
    tau: float = 0.0

    def __post_init__(self):
        if self.params.spec.input_dim != self.feature_map.output_dim:
            raise ConfigurationError(
                f"network input dim {self.params.spec.input_dim} does not match "
                f"feature dim {self.feature_map.output_dim}")
        if not self.params.is_projected():
            raise ConfigurationError("classifier parameters are not in projected (nonnegative) state")
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def input_dim(self) -> int:
        return self.feature_map.input_dim

    def with_tau(self, tau: float) -> "FeatureConvexClassifier":
        return replace(self, tau=float(tau))

    def _batch(self, X: Any) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise RejectedInputError("input dimension mismatch", expected=self.input_dim, actual=X.shape)
        return X

    def raw_logits(self, X: Any) -> np.ndarray:
        """g(phi(x)) for each row, without the threshold shift."""
        return icnn_logits(self.params, feature_apply(self.feature_map, self._batch(X)))

    def raw_logits_and_gradients(self, X: Any) -> Tuple[np.ndarray, np.ndarray]:
        """g(phi(x)) and grad g at phi(x) (feature space) for each row."""
        return icnn_input_gradients(self.params, feature_apply(self.feature_map, self._batch(X)))

    def decision_values(self, X: Any) -> np.ndarray:
        return self.raw_logits(X).astype(np.float64) + self.tau

    def predict_batch(self, X: Any) -> np.ndarray:
        return np.where(self.decision_values(X) > 0, 1, 2)


def predict(clf: FeatureConvexClassifier, x: Any) -> int:
    return int(clf.predict_batch(x)[0])


def dual_norm(p: Any, v: Any) -> float:
    """||v||_{p,*}: max|v| for p=1, l2 for p=2, sum|v| for p=inf."""
    p = parse_norm(p)
    v = np.abs(np.asarray(v, dtype=np.float64).reshape(-1))
    if p == 1:
        return float(v.max()) if v.size else 0.0
    if p == 2:
        return float(np.sqrt(np.sum(v * v)))
    return float(np.sum(v))


def radius_from_parts(shifted_logit: float, lipschitz: float, dual: float) -> float:
    if shifted_logit <= 0:
        return 0.0
    if dual <= TOL_GRAD:
        return math.inf
    return shifted_logit / (lipschitz * dual)


@dataclass
class Certificate:
    """Certificate of one input for one or more norms."""

    predicted_class: int
    logit: float
    tau: float
    shifted_logit: float
    grad: np.ndarray
    dual_norms: Dict[Norm, float] = field(default_factory=dict)
    lipschitz: Dict[Norm, float] = field(default_factory=dict)
    radii: Dict[Norm, float] = field(default_factory=dict)

    def radius(self, p: Any) -> float:
        return self.radii[parse_norm(p)]

    def recompute_radius(self, p: Any) -> float:
        p = parse_norm(p)
        return radius_from_parts(self.shifted_logit, self.lipschitz[p], self.dual_norms[p])


def _norm_list(norms: Union[Any, Iterable[Any]]) -> List[Norm]:
    if isinstance(norms, (str, int, float)):
        return [parse_norm(norms)]
    return [parse_norm(p) for p in norms]


def _build_certificate(fmap: FeatureMap, tau: float, logit: float, grad: np.ndarray,
                       norms: Sequence[Norm]) -> Certificate:
    if not math.isfinite(logit) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite logit or gradient during certification")
    shifted = logit + tau
    cert = Certificate(predicted_class=1 if shifted > 0 else 2, logit=logit, tau=tau,
                       shifted_logit=shifted, grad=grad)
    for p in norms:
        cert.dual_norms[p] = dual_norm(p, grad)
        cert.lipschitz[p] = feature_lipschitz(fmap, p)
        cert.radii[p] = radius_from_parts(shifted, cert.lipschitz[p], cert.dual_norms[p])
    return cert


def certify_chunk(clf: FeatureConvexClassifier, X: np.ndarray, norms: Sequence[Norm]) -> List[Certificate]:
    logits, grads = clf.raw_logits_and_gradients(X)
    return [_build_certificate(clf.feature_map, clf.tau, float(logits[i]), grads[i], norms)
            for i in range(len(logits))]


def certified_radius(clf: FeatureConvexClassifier, x: Any,
                     p: Union[Any, Iterable[Any]] = SUPPORTED_NORMS) -> Certificate:
    x = np.asarray(x)
    if x.ndim != 1:
        raise RejectedInputError("certified_radius expects one input vector", expected=1, actual=x.ndim)
    return certify_chunk(clf, clf._batch(x), _norm_list(p))[0]


def certify_batch(clf: FeatureConvexClassifier, X: Any, norms: Union[Any, Iterable[Any]] = SUPPORTED_NORMS,
                  threads: Optional[int] = None, chunk_size: int = 256) -> List[Certificate]:
    """Certificates for every row of X, in input order."""
    X = clf._batch(X)
    norms = _norm_list(norms)
    chunks = [X[start:start + chunk_size] for start in range(0, len(X), chunk_size)]
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        results = list(pool.map(lambda chunk: certify_chunk(clf, chunk, norms), chunks))
    certs = [cert for chunk in results for cert in chunk]
    logger.debug("Certified %d inputs in %d chunks", len(certs), len(chunks))
    return certs


def certificates_frame(certs: Sequence[Certificate], true_labels: Optional[Sequence[int]] = None) -> pd.DataFrame:
    rows = []
    for index, cert in enumerate(certs):
        row = {
            "index": index,
            "true_class": int(true_labels[index]) if true_labels is not None else 0,
            "predicted_class": cert.predicted_class,
            "logit": cert.shifted_logit,
        }
        for p in SUPPORTED_NORMS:
            row[f"radius_{norm_label(p)}"] = cert.radii.get(p, float("nan"))
        rows.append(row)
    return pd.DataFrame(rows, columns=CERTIFICATE_COLUMNS)


def measure_certification_time(clf: FeatureConvexClassifier, X: Any, p: Any = 1) -> float:
    """Mean wall-clock seconds per input, one input at a time on this thread."""
    X = clf._batch(X)
    if len(X) == 0:
        raise ConfigurationError("no inputs to time")
    start = time.perf_counter()
    for row in X:
        certified_radius(clf, row, p)
    return (time.perf_counter() - start) / len(X)


# ---------------------------------------------------------------------------
# Classifier artifact
# ---------------------------------------------------------------------------

def save_classifier(clf: FeatureConvexClassifier, path: Union[str, Path]) -> None:
    tensors = icnn_tensors(clf.params)
    if clf.feature_map.kind == CONCAT:
        tensors.append(("mu", clf.feature_map.mu, False))
    manifest = {
        "spec": clf.params.spec.to_dict(),
        "feature_map": {"kind": clf.feature_map.kind, "input_dim": clf.feature_map.input_dim},
        "tau": clf.tau,
    }
    write_model_file(path, "classifier", manifest, tensors)
    logger.info("Saved classifier (tau=%.6g, map=%s) to %s", clf.tau, clf.feature_map.kind, path)


def load_classifier(path: Union[str, Path]) -> FeatureConvexClassifier:
    manifest, tensors = read_model_file(path)
    if manifest.get("kind") != "classifier" or "feature_map" not in manifest:
        raise ModelFormatError(f"{path} holds a {manifest.get('kind')!r} model, not a classifier")
    params = params_from_file(manifest, tensors)
    fm = manifest["feature_map"]
    if fm.get("kind") == CONCAT and "mu" not in tensors:
        raise ModelFormatError("concat feature map stored without its mu tensor")
    try:
        fmap = FeatureMap(fm["kind"], int(fm["input_dim"]), tensors.get("mu"))
        return FeatureConvexClassifier(fmap, params, float(manifest.get("tau", 0.0)))
    except (KeyError, ConfigurationError, RejectedInputError) as exc:
        raise ModelFormatError(f"inconsistent classifier manifest: {exc}") from exc
