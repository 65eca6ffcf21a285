"""
Convex separability of two point sets.

A pair (X1, X2) is convexly separable when no point of X1 lies in conv(X2).
Membership is decided by the reconstruction problem

    min ||x - Y^T alpha||_2   s.t. alpha >= 0, sum(alpha) = 1

solved with away-step Frank-Wolfe. Every iterate is a convex combination of
vertices, line search on the quadratic is closed form, and the duality gap
bounds the suboptimality of the squared error.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Optional

import numpy as np
import pandas as pd

from errors import ConfigurationError, RejectedInputError
from settings import worker_count

logger = logging.getLogger(__name__)

DEFAULT_FW_TOL = 1e-9
DEFAULT_VERDICT_TOL = 1e-6


@dataclass
class Reconstruction:
    alpha: np.ndarray
    error: float
    gap: float
    iterations: int
    residual: np.ndarray

    @property
    def lower_bound(self) -> float:
        """Certified lower bound on the optimal error."""
        return math.sqrt(max(self.error ** 2 - self.gap, 0.0))


@dataclass
class SeparabilityReport:
    errors: np.ndarray
    alphas: List[np.ndarray]
    gaps: np.ndarray
    lower_bounds: np.ndarray
    residual_norms: np.ndarray
    separable: bool
    witness: Optional[int]
    tol: float

    @property
    def min_error(self) -> float:
        return float(self.errors.min())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "point_index": np.arange(len(self.errors)),
            "error_l2": self.errors,
            "gap": self.gaps,
            "separable_flag": (self.errors > self.tol).astype(int),
            "error_l1": self.residual_norms[:, 0],
            "error_linf": self.residual_norms[:, 2],
            "lower_bound": self.lower_bounds,
        })


def _as_points(points: Any, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ConfigurationError(f"{name} must be a nonempty set of points")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite coordinates")
    return arr


def convex_reconstruction(x: Any, Y: Any, tol: float = DEFAULT_FW_TOL, max_iters: Optional[int] = None,
                          verdict_tol: Optional[float] = None) -> Reconstruction:
    """Closest point of conv(Y) to x.

    Stops when the gap is at most tol * (1 + error^2). With `verdict_tol`, it
    keeps going until the error is <= verdict_tol or the gap-certified lower
    bound exceeds it, so membership is decided rather than approximated.
    """
    Y = _as_points(Y, "Y")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != Y.shape[1]:
        raise RejectedInputError("point dimension mismatch", expected=Y.shape[1], actual=x.shape[0])
    n = Y.shape[0]
    if max_iters is None:
        max_iters = 50 * n

    alpha = np.zeros(n)
    alpha[int(np.argmin(np.sum((Y - x) ** 2, axis=1)))] = 1.0

    iteration = 0
    while True:
        point = alpha @ Y
        residual = point - x
        error_sq = float(residual @ residual)
        scores = Y @ residual
        toward = int(np.argmin(scores))
        gap = max(2.0 * float(residual @ (point - Y[toward])), 0.0)

        gap_small = gap <= tol * (1.0 + error_sq)
        if verdict_tol is None:
            done = gap_small
        else:
            done = error_sq <= verdict_tol ** 2 or (gap_small and error_sq - gap > verdict_tol ** 2)
        if done or iteration >= max_iters:
            break

        active = np.flatnonzero(alpha > 0)
        away = int(active[np.argmax(scores[active])])
        away_gap = 2.0 * float(residual @ (Y[away] - point))
        if gap >= away_gap:
            direction = Y[toward] - point
            step_max = 1.0
        else:
            direction = point - Y[away]
            step_max = alpha[away] / (1.0 - alpha[away]) if alpha[away] < 1.0 else math.inf

        curvature = float(direction @ direction)
        if curvature == 0.0:
            break
        step = min(max(-float(residual @ direction) / curvature, 0.0), step_max)
        if gap >= away_gap:
            alpha *= 1.0 - step
            alpha[toward] += step
        else:
            alpha *= 1.0 + step
            alpha[away] -= step
            if step == step_max:
                alpha[away] = 0.0
        np.clip(alpha, 0.0, None, out=alpha)
        alpha /= alpha.sum()
        iteration += 1

    return Reconstruction(alpha=alpha, error=math.sqrt(error_sq), gap=gap, iterations=iteration,
                          residual=residual)


def is_convexly_separable(X1: Any, X2: Any, tol: float = DEFAULT_VERDICT_TOL,
                          fw_tol: float = DEFAULT_FW_TOL, max_iters: Optional[int] = None,
                          threads: Optional[int] = None, stop_at_witness: bool = False) -> SeparabilityReport:
    """Reconstruct every x in X1 from X2; separable iff every error exceeds `tol`."""
    X1 = _as_points(X1, "X1")
    X2 = _as_points(X2, "X2")
    if X1.shape[1] != X2.shape[1]:
        raise RejectedInputError("X1 and X2 differ in dimension", expected=X2.shape[1], actual=X1.shape[1])

    def solve(x):
        return convex_reconstruction(x, X2, tol=fw_tol, max_iters=max_iters, verdict_tol=tol)

    if stop_at_witness:
        results = []
        for x in X1:
            results.append(solve(x))
            if results[-1].error <= tol:
                break
    else:
        with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
            results = list(pool.map(solve, X1))

    errors = np.array([r.error for r in results])
    inside = np.flatnonzero(errors <= tol)
    residual_norms = np.array([[np.sum(np.abs(r.residual)), r.error, np.max(np.abs(r.residual))]
                               for r in results])
    unresolved = sum(1 for r in results if tol < r.error and r.lower_bound <= tol)
    if unresolved:
        logger.warning("%d reconstructions hit max_iters before the verdict was certified", unresolved)
    return SeparabilityReport(
        errors=errors,
        alphas=[r.alpha for r in results],
        gaps=np.array([r.gap for r in results]),
        lower_bounds=np.array([r.lower_bound for r in results]),
        residual_norms=residual_norms,
        separable=inside.size == 0,
        witness=int(inside[0]) if inside.size else None,
        tol=tol,
    )


def slab_check(X1: Any, X2: Any) -> Optional[int]:
    """Smallest coordinate k (0-based) with max over X1 < min over X2; a sufficient separability witness."""
    X1 = _as_points(X1, "X1")
    X2 = _as_points(X2, "X2")
    hits = np.flatnonzero(X1.max(axis=0) < X2.min(axis=0))
    return int(hits[0]) if hits.size else None


def separation_probability_bound(M: int, N: int, d: int) -> float:
    """Lower bound on P(separable) for M + N i.i.d. uniform points in [-1, 1]^d."""
    if M < 1 or N < 1 or d < 1:
        raise ConfigurationError(f"need M, N, d >= 1, got {M}, {N}, {d}")
    if d >= M + N:
        return 1.0
    # M! N! / (M + N)! as a running product
    ratio = 1.0
    for i in range(1, M + 1):
        ratio *= i / (N + i)
    return 1.0 - (1.0 - ratio) ** d


def _trial_separable(M: int, N: int, d: int, seed_seq: np.random.SeedSequence) -> bool:
    rng = np.random.default_rng(seed_seq)
    X1 = rng.uniform(-1.0, 1.0, size=(M, d))
    X2 = rng.uniform(-1.0, 1.0, size=(N, d))
    if slab_check(X1, X2) is not None or slab_check(X2, X1) is not None:
        return True
    return is_convexly_separable(X1, X2, stop_at_witness=True).separable


def monte_carlo_separability(M: int, N: int, d: int, trials: int, seed: int = 0,
                             threads: Optional[int] = None) -> float:
    """Fraction of trials in which uniform draws of X1 (M points) and X2 (N points) are convexly separable."""
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    if M < 1 or N < 1 or d < 1:
        raise ConfigurationError(f"need M, N, d >= 1, got {M}, {N}, {d}")
    children = np.random.SeedSequence(seed).spawn(trials)
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        verdicts = list(pool.map(lambda child: _trial_separable(M, N, d, child), children))
    frequency = float(np.mean(verdicts))
    logger.debug("Monte-Carlo separability M=%d N=%d d=%d: %.4f over %d trials", M, N, d, frequency, trials)
    return frequency
