import json
import struct

import numpy as np
import pytest

from errors import ConfigurationError, ModelFormatError, ModelVersionError, RejectedInputError
from icnn import (
    FORMAT_VERSION,
    MODEL_MAGIC,
    IcnnParams,
    IcnnSpec,
    add_logits,
    icnn_forward,
    icnn_init,
    icnn_input_gradient,
    icnn_input_gradients,
    icnn_load,
    icnn_logits,
    icnn_save,
    project_nonnegative,
    scale_output_layer,
)
from tensorcore import grad_check, signature


def _zero_params(spec):
    return IcnnParams(spec, {name: np.zeros(shape, dtype=np.float32) for name, shape, _ in spec.layer_shapes()})


def test_init_shapes_and_constraints():
    spec = IcnnSpec(10, (200, 50), True, seed=3)
    params = icnn_init(spec)
    assert params["A1"].shape == (200, 10)
    assert params["A2"].shape == (50, 200)
    assert params["C2"].shape == (50, 10)
    assert params["A3"].shape == (1, 50)
    assert params["C3"].shape == (1, 10)
    assert "C1" not in params.weights, "the first layer has no passthrough"
    assert params.constrained == ("A2", "A3")
    for name in params.constrained:
        assert params[name].min() >= 0.0 and params[name].max() <= 0.003
    assert all(v.dtype == np.float32 for v in params.weights.values())


def test_init_is_deterministic_per_seed():
    first = icnn_init(IcnnSpec(4, (8, 4), seed=11))
    second = icnn_init(IcnnSpec(4, (8, 4), seed=11))
    other = icnn_init(IcnnSpec(4, (8, 4), seed=12))
    assert all(np.array_equal(first[n], second[n]) for n in first.weights)
    assert not np.array_equal(first["A1"], other["A1"])


def test_spec_rejects_missing_hidden_layer():
    with pytest.raises(ConfigurationError):
        IcnnSpec(3, ())


def test_two_layer_sum_of_relus():
    q = 4
    spec = IcnnSpec(q, (q,), True)
    params = _zero_params(spec).replace({
        "A1": np.eye(q, dtype=np.float32),
        "A2": np.ones((1, q), dtype=np.float32),
    })
    z = np.array([0.5, 1.0, 0.0, 2.0])
    assert icnn_forward(params, z) == pytest.approx(3.5)
    assert icnn_forward(params, -z) == 0.0


def test_constant_network():
    spec = IcnnSpec(3, (5, 2), True)
    params = _zero_params(spec).replace({"b3": np.array([1.5], dtype=np.float32)})
    assert np.array_equal(icnn_logits(params, np.random.default_rng(0).normal(size=(7, 3))), np.full(7, 1.5))
    assert np.array_equal(icnn_input_gradient(params, np.ones(3)), np.zeros(3))


def test_linear_network_gradient():
    spec = IcnnSpec(3, (2,), True)
    w = np.array([[1.0, -2.0, 0.5]], dtype=np.float32)
    params = _zero_params(spec).replace({"C2": w})
    for z in (np.zeros(3), np.array([3.0, -1.0, 2.0])):
        assert np.array_equal(icnn_input_gradient(params, z), w[0])


def test_dimension_mismatch_rejected(random_params):
    params = random_params(3)
    with pytest.raises(RejectedInputError):
        icnn_logits(params, np.zeros((2, 4)))
    with pytest.raises(RejectedInputError):
        icnn_forward(params, np.zeros((2, 3)))


def test_convex_along_chords(random_params):
    rng = np.random.default_rng(7)
    params = random_params(6, (32, 16), seed=5)
    n = 10_000
    z = rng.uniform(-1, 1, size=(n, 6))
    w = rng.uniform(-1, 1, size=(n, 6))
    theta = rng.uniform(0, 1, size=(n, 1))
    mix = icnn_logits(params, theta * z + (1 - theta) * w).astype(np.float64)
    rhs = theta[:, 0] * icnn_logits(params, z) + (1 - theta[:, 0]) * icnn_logits(params, w)
    assert np.all(mix <= rhs + 1e-5 * (1 + np.abs(rhs)))


def test_convex_without_passthrough(random_params):
    rng = np.random.default_rng(8)
    params = random_params(4, (16, 16, 8), seed=2, passthrough=False)
    z, w = rng.uniform(-1, 1, size=(2, 2000, 4))
    mid = icnn_logits(params, 0.5 * (z + w)).astype(np.float64)
    rhs = 0.5 * (icnn_logits(params, z) + icnn_logits(params, w))
    assert np.all(mid <= rhs + 1e-5 * (1 + np.abs(rhs)))


def test_gradient_is_a_global_underestimator(random_params):
    rng = np.random.default_rng(9)
    params = random_params(5, (24, 12), seed=4)
    anchors = rng.uniform(-1, 1, size=(200, 5))
    others = rng.uniform(-1, 1, size=(200, 5))
    values, grads = icnn_input_gradients(params, anchors)
    targets = icnn_logits(params, others).astype(np.float64)
    tangent = values + np.sum(grads * (others - anchors), axis=1)
    assert np.all(targets >= tangent - 1e-5 * (1 + np.abs(tangent)))


def test_sublevel_sets_are_convex(random_params):
    rng = np.random.default_rng(10)
    params = random_params(3, (16, 8), seed=6)
    x, y = rng.uniform(-1, 1, size=(2, 5000, 3))
    mid = icnn_logits(params, 0.5 * (x + y)).astype(np.float64)
    worst = np.maximum(icnn_logits(params, x), icnn_logits(params, y))
    assert np.all(mid <= worst + 1e-5 * (1 + np.abs(worst)))


def test_projection_example():
    spec = IcnnSpec(1, (2,), True)
    params = _zero_params(spec).replace({
        "A1": np.array([[-3.0], [4.0]], dtype=np.float32),
        "A2": np.array([[-1.0, 2.0]], dtype=np.float32),
        "C2": np.array([[-5.0]], dtype=np.float32),
    })
    projected = project_nonnegative(params)
    assert np.array_equal(projected["A2"], [[0.0, 2.0]])
    assert np.array_equal(projected["A1"], params["A1"]), "unconstrained weights are untouched"
    assert np.array_equal(projected["C2"], params["C2"])
    assert projected.is_projected() and not params.is_projected()


def test_projection_is_idempotent_and_exact(random_params):
    params = random_params(4, (8, 8), seed=1)
    again = project_nonnegative(params)
    assert all(np.array_equal(again[n], params[n]) for n in params.weights)
    assert all(again[n].tobytes() == params[n].tobytes() for n in params.constrained)
    rng = np.random.default_rng(0)
    noisy = params.replace({n: params[n] - rng.uniform(0, 1, params[n].shape).astype(np.float32)
                            for n in params.constrained})
    once = project_nonnegative(noisy)
    twice = project_nonnegative(once)
    assert all(twice[n].tobytes() == once[n].tobytes() for n in once.weights)


def test_scale_output_layer_scales_logits(random_params):
    params = random_params(3, (8,), seed=3)
    z = np.random.default_rng(1).normal(size=(10, 3))
    np.testing.assert_allclose(icnn_logits(scale_output_layer(params, 10.0), z),
                               10.0 * icnn_logits(params, z), rtol=1e-5, atol=1e-5)
    with pytest.raises(ConfigurationError):
        scale_output_layer(params, 0.0)


def test_random_networks_pass_grad_check(random_params):
    rng = np.random.default_rng(2024)
    widths = (4, 16, 64, 256)
    for trial in range(100):
        depth = int(rng.integers(2, 5))
        hidden = tuple(int(rng.choice(widths)) for _ in range(depth - 1))
        q = int(rng.integers(1, 9))
        params = random_params(q, hidden, seed=trial, passthrough=bool(trial % 4))
        spec = params.spec

        @signature((None, q))
        def builder(tape, z, spec=spec):
            return tape.sum(add_logits(tape, z, spec))

        z = rng.uniform(-1, 1, size=(3, q))
        report = grad_check(builder, [z], tol=1e-4, fd_step=1e-3, params=params.weights, max_coords=8,
                            seed=trial)
        assert report.passed, f"trial {trial} hidden={hidden}: {report.errors}"


def test_save_load_round_trip_is_bit_exact(tmp_path, random_params):
    params = random_params(5, (12, 6), seed=9)
    path = tmp_path / "net.fcc"
    icnn_save(params, params.spec, path)
    loaded, spec = icnn_load(path)
    assert spec == params.spec
    assert loaded.constrained == params.constrained
    for name in params.weights:
        assert loaded[name].tobytes() == params[name].tobytes(), name


def test_save_rejects_foreign_spec(tmp_path, random_params):
    params = random_params(5, (12,), seed=9)
    with pytest.raises(ConfigurationError):
        icnn_save(params, IcnnSpec(5, (13,)), tmp_path / "net.fcc")


def test_truncated_model_file(tmp_path, random_params):
    params = random_params(3, (4,), seed=0)
    path = tmp_path / "net.fcc"
    icnn_save(params, params.spec, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ModelFormatError) as info:
        icnn_load(path)
    assert info.value.offset == len(raw) - 3


def test_trailing_bytes_rejected(tmp_path, random_params):
    params = random_params(3, (4,), seed=0)
    path = tmp_path / "net.fcc"
    icnn_save(params, params.spec, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ModelFormatError):
        icnn_load(path)


def test_wrong_magic_is_version_error(tmp_path):
    path = tmp_path / "net.fcc"
    path.write_bytes(b"NOTMODEL" + b"\x00" * 16)
    with pytest.raises(ModelVersionError):
        icnn_load(path)


def test_unsupported_format_version(tmp_path):
    manifest = json.dumps({"format_version": "9.9", "kind": "icnn", "tensors": []}).encode("utf-8")
    path = tmp_path / "net.fcc"
    path.write_bytes(MODEL_MAGIC + struct.pack("<I", len(manifest)) + manifest)
    assert FORMAT_VERSION != "9.9"
    with pytest.raises(ModelVersionError):
        icnn_load(path)
