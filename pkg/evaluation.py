"""
Clean accuracies, certified-accuracy curves, the robustness surface over
threshold shifts, and PGD attacks used to audit certificate soundness.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from certify import TOL_GRAD, Certificate, FeatureConvexClassifier, certify_batch
from errors import ConfigurationError, ContractViolationError
from featuremap import feature_lipschitz, feature_pullback, parse_norm
from settings import worker_count

logger = logging.getLogger(__name__)

DEFAULT_TAU_COUNT = 41
DEFAULT_PGD_STEPS = 50
DEFAULT_PGD_RESTARTS = 5
SOUNDNESS_FACTOR = 0.999


@dataclass(frozen=True)
class CurvePoint:
    radius: float
    certified_accuracy: float


@dataclass
class SurfaceGrid:
    taus: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    curves: List[List[CurvePoint]]

    @property
    def accuracy_difference(self) -> np.ndarray:
        return self.alpha1 - self.alpha2

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for tau, a1, a2, curve in zip(self.taus, self.alpha1, self.alpha2, self.curves):
            for point in curve:
                rows.append({"tau": tau, "alpha1": a1, "alpha2": a2, "radius": point.radius,
                             "certified_accuracy": point.certified_accuracy,
                             "alpha1_minus_alpha2": a1 - a2})
        return pd.DataFrame(rows, columns=["tau", "alpha1", "alpha2", "radius",
                                           "certified_accuracy", "alpha1_minus_alpha2"])


@dataclass
class AttackResult:
    success: bool
    delta: Optional[np.ndarray]
    norm: float
    steps_used: int


@dataclass
class AuditReport:
    """Outcome of attacking certified points at a fraction of their radius."""

    p: float
    factor: float
    attacked: int = 0
    successes: int = 0
    skipped_class2: int = 0
    skipped_infinite: int = 0
    skipped_small_margin: int = 0
    success_indices: List[int] = field(default_factory=list)

    def to_dict(self):
        return {
            "p": "inf" if math.isinf(self.p) else self.p,
            "factor": self.factor,
            "attacked": self.attacked,
            "successes": self.successes,
            "skipped_class2": self.skipped_class2,
            "skipped_infinite": self.skipped_infinite,
            "skipped_small_margin": self.skipped_small_margin,
            "success_indices": self.success_indices,
        }


# ---------------------------------------------------------------------------
# Accuracies and curves
# ---------------------------------------------------------------------------

def _require_both_classes(labels: np.ndarray) -> Tuple[int, int]:
    n1, n2 = int(np.sum(labels == 1)), int(np.sum(labels == 2))
    if n1 == 0 or n2 == 0:
        raise ConfigurationError(f"both classes must be present (class 1: {n1}, class 2: {n2})")
    return n1, n2


def class_accuracies(predictions: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """(alpha1, alpha2): per-class fraction predicted correctly."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    n1, n2 = _require_both_classes(labels)
    alpha1 = np.sum((labels == 1) & (predictions == 1)) / n1
    alpha2 = np.sum((labels == 2) & (predictions == 2)) / n2
    return float(alpha1), float(alpha2)


def clean_accuracies(clf: FeatureConvexClassifier, dataset) -> Tuple[float, float]:
    return class_accuracies(clf.predict_batch(dataset.inputs), dataset.labels)


def _check_radii(radii: Sequence[float]) -> np.ndarray:
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim != 1 or radii.size == 0 or radii[0] != 0 or np.any(np.diff(radii) < 0):
        raise ConfigurationError("radii must be a nonempty ascending grid starting at 0")
    return radii


def curve_from_radii(class1_radii: np.ndarray, class1_predicted: np.ndarray, radii: np.ndarray) -> List[CurvePoint]:
    n1 = len(class1_radii)
    return [CurvePoint(float(r), float(np.sum(class1_predicted & (class1_radii >= r)) / n1)) for r in radii]


def certified_accuracy_curve(clf: FeatureConvexClassifier, dataset, p: Any, radii: Sequence[float],
                             threads: Optional[int] = None,
                             certs: Optional[Sequence[Certificate]] = None) -> List[CurvePoint]:
    """Fraction of class-1 samples predicted 1 with certified radius >= r, for each r."""
    p = parse_norm(p)
    radii = _check_radii(radii)
    labels = np.asarray(dataset.labels)
    _require_both_classes(labels)
    if certs is None:
        certs = certify_batch(clf, dataset.inputs, [p], threads=threads)
    mask = labels == 1
    cert_radii = np.array([c.radii[p] for c in certs])[mask]
    predicted = np.array([c.predicted_class == 1 for c in certs])[mask]
    return curve_from_radii(cert_radii, predicted, radii)


def curve_frame(points: Sequence[CurvePoint]) -> pd.DataFrame:
    return pd.DataFrame([{"radius": pt.radius, "certified_accuracy": pt.certified_accuracy} for pt in points],
                        columns=["radius", "certified_accuracy"])


def default_tau_grid(logits: Sequence[float], count: int = DEFAULT_TAU_COUNT) -> np.ndarray:
    """tau = -quantile of the given logits at `count` evenly spaced levels, ascending and unique."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ConfigurationError("cannot build a tau grid from no logits")
    quantiles = np.quantile(logits, np.linspace(0.0, 1.0, count))
    return np.unique(-quantiles)


def robustness_surface(clf: FeatureConvexClassifier, dataset, p: Any,
                       tau_grid: Optional[Sequence[float]] = None,
                       radii: Sequence[float] = (0.0,), tau_logits: Optional[Sequence[float]] = None,
                       threads: Optional[int] = None) -> SurfaceGrid:
    """Accuracies and curves for every tau; the network is evaluated once, tau only shifts the threshold.

    Without an explicit grid, tau values come from quantiles of `tau_logits`
    (validation logits) or, failing that, of the dataset's own logits.
    """
    p = parse_norm(p)
    radii = _check_radii(radii)
    labels = np.asarray(dataset.labels)
    _require_both_classes(labels)

    certs = certify_batch(clf.with_tau(0.0), dataset.inputs, [p], threads=threads)
    logits = np.array([c.logit for c in certs])
    duals = np.array([c.dual_norms[p] for c in certs])

    if tau_grid is None:
        tau_grid = default_tau_grid(tau_logits if tau_logits is not None else logits)
    taus = np.asarray(tau_grid, dtype=np.float64)
    if np.any(np.diff(taus) < 0):
        raise ConfigurationError("tau_grid must be sorted ascending")

    lipschitz = feature_lipschitz(clf.feature_map, p)
    mask1 = labels == 1
    alpha1, alpha2, curves = [], [], []
    for tau in taus:
        shifted = logits + tau
        predicted = np.where(shifted > 0, 1, 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            radius = np.where(duals <= TOL_GRAD, math.inf, shifted / (lipschitz * duals))
        radius = np.where(predicted == 1, radius, 0.0)
        a1, a2 = class_accuracies(predicted, labels)
        alpha1.append(a1)
        alpha2.append(a2)
        curves.append(curve_from_radii(radius[mask1], predicted[mask1] == 1, radii))
    logger.info("Robustness surface: %d tau rows x %d radii", len(taus), len(radii))
    return SurfaceGrid(taus, np.array(alpha1), np.array(alpha2), curves)


def median_radius(certs: Sequence[Certificate], p: Any, labels: Optional[Sequence[int]] = None) -> float:
    """Median radius over class-1 samples (all samples without labels); class-2 predictions count as 0."""
    p = parse_norm(p)
    values = np.array([c.radii[p] for c in certs], dtype=np.float64)
    if labels is not None:
        values = values[np.asarray(labels) == 1]
    if values.size == 0:
        raise ConfigurationError("no samples to take a median over")
    return float(np.median(values))


# ---------------------------------------------------------------------------
# PGD
# ---------------------------------------------------------------------------

def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball via the sorted simplex projection of |v|."""
    magnitude = np.abs(v)
    if magnitude.sum() <= radius:
        return v
    u = np.sort(magnitude)[::-1]
    cssv = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, len(u) + 1) > (cssv - radius))[0][-1]
    theta = (cssv[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.clip(magnitude - theta, 0.0, None)


def lp_norm(v: np.ndarray, p: float) -> float:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if math.isinf(p):
        return float(np.max(np.abs(v))) if v.size else 0.0
    return float(np.linalg.norm(v, ord=int(p)))


def _project(delta: np.ndarray, p: float, budget: float) -> np.ndarray:
    if math.isinf(p):
        return np.clip(delta, -budget, budget)
    if p == 2:
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        factor = np.where(norms > budget, budget / np.maximum(norms, 1e-300), 1.0)
        projected = delta * factor
    else:
        projected = np.stack([project_l1_ball(row, budget) for row in delta])
    # rounding can leave a projected row a hair outside the ball
    norms = np.array([lp_norm(row, p) for row in projected])
    over = norms > budget
    if np.any(over):
        projected[over] *= (budget / norms[over] * (1.0 - 1e-12))[:, None]
    return projected


def _random_start(rng: np.random.Generator, shape: Tuple[int, int], p: float, budget: float) -> np.ndarray:
    n, d = shape
    if math.isinf(p):
        return rng.uniform(-budget, budget, size=shape)
    if p == 2:
        direction = rng.standard_normal(shape)
    else:
        direction = rng.laplace(size=shape)
    norms = np.array([lp_norm(row, p) for row in direction])[:, None]
    scale = budget * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
    return _project(direction / np.maximum(norms, 1e-300) * scale, p, budget)


def _descent_step(delta: np.ndarray, grad: np.ndarray, p: float, step_size: float) -> np.ndarray:
    if math.isinf(p):
        return delta - step_size * np.sign(grad)
    if p == 2:
        norms = np.linalg.norm(grad, axis=1, keepdims=True)
        return delta - step_size * np.where(norms > 0, grad / np.maximum(norms, 1e-300), 0.0)
    # steepest l1 descent moves the single coordinate with the largest gradient
    rows = np.arange(len(grad))
    coords = np.argmax(np.abs(grad), axis=1)
    stepped = delta.copy()
    stepped[rows, coords] -= step_size * np.sign(grad[rows, coords])
    return stepped


def pgd_attack(clf: FeatureConvexClassifier, x: Any, p: Any, budget: float,
               steps: int = DEFAULT_PGD_STEPS, step_size: Optional[float] = None,
               restarts: int = DEFAULT_PGD_RESTARTS, seed: int = 0) -> AttackResult:
    """Minimize the logit of a class-1 input within the l_p ball of radius `budget`.

    Restart 0 starts at delta = 0, the rest at random points of the ball; all
    restarts advance together as rows of one batch. No clamping to the data range.
    """
    p = parse_norm(p)
    if budget < 0:
        raise ConfigurationError(f"budget must be >= 0, got {budget}")
    x = np.asarray(x, dtype=np.float32).reshape(-1)
    base_logit = clf.decision_values(x)[0]
    if base_logit <= 0:
        raise ContractViolationError("pgd_attack needs an input predicted as class 1")
    if budget == 0 or steps <= 0:
        return AttackResult(False, None, 0.0, 0)
    if step_size is None:
        step_size = 2.5 * budget / steps
    restarts = max(int(restarts), 1)

    rng = np.random.default_rng(seed)
    x64 = x.astype(np.float64)
    delta = np.zeros((restarts, x.size))
    if restarts > 1:
        delta[1:] = _random_start(rng, (restarts - 1, x.size), p, budget)

    for step in range(steps + 1):
        points = (x64 + delta).astype(np.float32)
        logits, grad_z = clf.raw_logits_and_gradients(points)
        decisions = logits.astype(np.float64) + clf.tau
        for row in np.flatnonzero(decisions <= 0):
            norm = lp_norm(delta[row], p)
            if norm <= budget:
                logger.debug("PGD flip at step %d (restart %d, norm %.6g)", step, row, norm)
                return AttackResult(True, delta[row].copy(), norm, step)
        if step == steps:
            break
        grad_x = feature_pullback(clf.feature_map, points, grad_z).astype(np.float64)
        delta = _project(_descent_step(delta, grad_x, p, step_size), p, budget)
    return AttackResult(False, None, 0.0, steps)


def soundness_audit(clf: FeatureConvexClassifier, X: Any, p: Any, factor: float = SOUNDNESS_FACTOR,
                    steps: int = DEFAULT_PGD_STEPS, restarts: int = DEFAULT_PGD_RESTARTS, seed: int = 0,
                    threads: Optional[int] = None, min_logit: float = 0.0,
                    certs: Optional[Sequence[Certificate]] = None) -> AuditReport:
    """Attack every finitely certified class-1 point at factor * radius; any success is a soundness failure."""
    p = parse_norm(p)
    X = np.asarray(X, dtype=np.float32)
    if certs is None:
        certs = certify_batch(clf, X, [p], threads=threads)
    report = AuditReport(p=p, factor=factor)
    targets = []
    for index, cert in enumerate(certs):
        if cert.predicted_class != 1:
            report.skipped_class2 += 1
        elif math.isinf(cert.radii[p]):
            report.skipped_infinite += 1
        elif cert.shifted_logit < min_logit:
            report.skipped_small_margin += 1
        else:
            targets.append((index, factor * cert.radii[p]))

    def attack(target):
        index, budget = target
        return pgd_attack(clf, X[index], p, budget, steps=steps, restarts=restarts, seed=seed + index)

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        results = list(pool.map(attack, targets))
    report.attacked = len(targets)
    for (index, _), result in zip(targets, results):
        if result.success:
            report.successes += 1
            report.success_indices.append(index)
    if report.successes:
        logger.warning("Soundness audit: %d of %d attacks flipped a certified point", report.successes, report.attacked)
    else:
        logger.info("Soundness audit: 0 of %d attacks succeeded (p=%s, factor=%s)", report.attacked, p, factor)
    return report
