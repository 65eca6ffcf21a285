import os
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from certify import FeatureConvexClassifier  # noqa: E402
from featuremap import identity_map  # noqa: E402
from icnn import IcnnParams, IcnnSpec, icnn_input_gradients, icnn_logits  # noqa: E402
from settings import MNIST_DIR_ENV, OUTPUT_DIR_ENV  # noqa: E402


def build_random_params(input_dim, hidden=(16, 8), seed=0, passthrough=True, constrained_scale=2.0):
    """Projected params with weights large enough that the hidden path matters."""
    spec = IcnnSpec(input_dim, tuple(hidden), passthrough, seed)
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape, constrained in spec.layer_shapes():
        if name.startswith("b"):
            value = rng.normal(0.0, 0.5, size=shape)
        elif constrained:
            value = rng.uniform(0.0, constrained_scale / np.sqrt(shape[1]), size=shape)
        else:
            value = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape)
        weights[name] = value.astype(np.float32)
    return IcnnParams(spec, weights)


def build_linear_classifier(w, b=0.0, tau=0.0):
    """g(z) = w.z + b through the final passthrough, identity feature map."""
    w = np.asarray(w, dtype=np.float32).reshape(-1)
    d = w.size
    spec = IcnnSpec(d, (1,), True, 0)
    weights = {
        "A1": np.zeros((1, d), dtype=np.float32),
        "b1": np.zeros(1, dtype=np.float32),
        "A2": np.zeros((1, 1), dtype=np.float32),
        "b2": np.array([b], dtype=np.float32),
        "C2": w[None, :].copy(),
    }
    return FeatureConvexClassifier(identity_map(d), IcnnParams(spec, weights), tau)


def check_convexity(params, points, seed=0, pairs=10_000):
    """Chord and tangent inequalities of g on random pairs drawn from `points` (feature space), in float64."""
    exact = params.as_dtype(np.float64)
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    z = points[rng.integers(0, len(points), size=pairs)]
    w = points[rng.integers(0, len(points), size=pairs)]
    theta = rng.uniform(0, 1, size=(pairs, 1))
    mix = icnn_logits(exact, theta * z + (1 - theta) * w)
    values_z, grads_z = icnn_input_gradients(exact, z)
    values_w = icnn_logits(exact, w)
    rhs = theta[:, 0] * values_z + (1 - theta[:, 0]) * values_w
    assert np.all(mix <= rhs + 1e-5 * (1 + np.abs(rhs))), "chord inequality violated"
    tangent = values_z + np.sum(grads_z * (w - z), axis=1)
    assert np.all(values_w >= tangent - 1e-5 * (1 + np.abs(tangent))), "tangent is not an underestimator"


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims)
    Path(path).write_bytes(header + bytes(payload))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_params():
    return build_random_params


@pytest.fixture
def linear_classifier():
    return build_linear_classifier


@pytest.fixture
def idx_writer():
    return write_idx


@pytest.fixture(autouse=True)
def _isolated_output_dir(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


@pytest.fixture
def convexity_check():
    return check_convexity


@pytest.fixture(scope="session")
def mnist_dir():
    directory = os.environ.get(MNIST_DIR_ENV)
    if not directory or not Path(directory).is_dir():
        pytest.skip(f"set {MNIST_DIR_ENV} to the MNIST IDX directory to run this test")
    return Path(directory)
