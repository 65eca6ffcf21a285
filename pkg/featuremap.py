"""
Lipschitz feature maps applied before the convex network.

    identity:                 phi(x) = x
    mean_offset_abs_concat:   phi(x) = (x - mu, |x - mu|)

with Lipschitz constants 1 (identity, every p) and 2 / sqrt(2) / 1 for
p = 1 / 2 / inf (concat).
"""

import math
from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np

from errors import ConfigurationError, RejectedInputError, UnsupportedNormError
from tensorcore import Tape, Var, as_tensor

IDENTITY = "identity"
CONCAT = "mean_offset_abs_concat"
KINDS = (IDENTITY, CONCAT)

Norm = Union[int, float]
SUPPORTED_NORMS = (1, 2, math.inf)

_CONCAT_LIPSCHITZ = {1: 2.0, 2: math.sqrt(2.0), math.inf: 1.0}


def parse_norm(value: Any) -> Norm:
    """Accept 1, 2, inf (or the strings '1', '2', 'inf', 'linf', 'l2', ...)."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text.startswith("l"):
            text = text[1:]
        try:
            value = float(text)
        except ValueError:
            raise UnsupportedNormError(value) from None
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise UnsupportedNormError(value) from None
    if number == 1.0:
        return 1
    if number == 2.0:
        return 2
    if math.isinf(number) and number > 0:
        return math.inf
    raise UnsupportedNormError(value)


def norm_label(p: Norm) -> str:
    return "linf" if math.isinf(p) else f"l{int(p)}"


@dataclass(frozen=True)
class FeatureMap:
    kind: str
    input_dim: int
    mu: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown feature map kind {self.kind!r}; use one of {KINDS}")
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.kind == CONCAT:
            mu = np.zeros(self.input_dim) if self.mu is None else self.mu
            mu = as_tensor(mu, np.float32, "mu").reshape(-1)
            if mu.shape != (self.input_dim,):
                raise RejectedInputError("mu dimension mismatch", expected=self.input_dim, actual=mu.shape)
            object.__setattr__(self, "mu", mu)
        elif self.mu is not None:
            raise ConfigurationError("the identity map takes no mu")

    @property
    def output_dim(self) -> int:
        return self.input_dim if self.kind == IDENTITY else 2 * self.input_dim

    def check_input(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.input_dim or x.ndim not in (1, 2):
            raise RejectedInputError("input dimension mismatch", expected=self.input_dim, actual=x.shape)

    def add_to_tape(self, tape: Tape, x: Var) -> Var:
        if self.kind == IDENTITY:
            return x
        offset = tape.add(x, tape.constant(-self.mu))
        return tape.concat(offset, tape.abs(offset))


def identity_map(input_dim: int) -> FeatureMap:
    return FeatureMap(IDENTITY, input_dim)


def concat_map(mu: Any) -> FeatureMap:
    mu = np.asarray(mu, dtype=np.float32).reshape(-1)
    return FeatureMap(CONCAT, mu.size, mu)


def feature_apply(fmap: FeatureMap, x: Any) -> np.ndarray:
    """phi(x) for one vector (d,) or a batch (n, d)."""
    x = as_tensor(x, np.float32, "x")
    fmap.check_input(x)
    if fmap.kind == IDENTITY:
        return x
    offset = x - fmap.mu
    return np.concatenate([offset, np.abs(offset)], axis=-1)


def feature_pullback(fmap: FeatureMap, x: Any, grad_z: Any) -> np.ndarray:
    """Vector-Jacobian product: gradient w.r.t. x from a gradient w.r.t. phi(x)."""
    x = np.asarray(x, dtype=np.float32)
    grad_z = np.asarray(grad_z, dtype=np.float32)
    fmap.check_input(x)
    if grad_z.shape[-1] != fmap.output_dim:
        raise RejectedInputError("feature gradient dimension mismatch",
                                 expected=fmap.output_dim, actual=grad_z.shape)
    if fmap.kind == IDENTITY:
        return grad_z
    d = fmap.input_dim
    return grad_z[..., :d] + np.sign(x - fmap.mu) * grad_z[..., d:]


def feature_lipschitz(fmap: FeatureMap, p: Any) -> float:
    p = parse_norm(p)
    if fmap.kind == IDENTITY:
        return 1.0
    return _CONCAT_LIPSCHITZ[p]


def channel_mean(inputs: np.ndarray, channels: int = 1) -> np.ndarray:
    """Per-channel mean of (n, d) data, broadcast back to the pixel layout (channel-major)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    n, d = inputs.shape
    if channels < 1 or d % channels:
        raise ConfigurationError(f"cannot split {d} features into {channels} channels")
    per_channel = inputs.reshape(n, channels, d // channels).mean(axis=(0, 2))
    return np.repeat(per_channel, d // channels).astype(np.float32)


def feature_map_from_dataset(kind: str, inputs: Any, channels: int = 1) -> FeatureMap:
    """Build a map for training data; concat freezes mu from these inputs."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ConfigurationError("feature map needs a nonempty (n, d) input array")
    if kind == IDENTITY:
        return identity_map(inputs.shape[1])
    if kind == CONCAT:
        return concat_map(channel_mean(inputs, channels))
    raise ConfigurationError(f"unknown feature map kind {kind!r}; use one of {KINDS}")
