import math

import numpy as np
import pandas as pd
import pytest

from certify import (
    CERTIFICATE_COLUMNS,
    FeatureConvexClassifier,
    certificates_frame,
    certified_radius,
    certify_batch,
    dual_norm,
    load_classifier,
    measure_certification_time,
    predict,
    save_classifier,
)
from errors import ConfigurationError, ModelFormatError, NumericError, UnsupportedNormError
from featuremap import SUPPORTED_NORMS, concat_map, identity_map
from icnn import icnn_save, project_nonnegative, scale_output_layer

NORMS = SUPPORTED_NORMS


def _concat_classifier(random_params, d=2, hidden=(16, 8), seed=0, tau=0.0):
    mu = np.random.default_rng(seed).uniform(-0.2, 0.2, size=d)
    return FeatureConvexClassifier(concat_map(mu), random_params(2 * d, hidden, seed=seed), tau)


def test_predict_linear(linear_classifier):
    clf = linear_classifier([1.0, 0.0])
    assert predict(clf, [0.5, 0.3]) == 1
    assert predict(clf, [-0.5, 0.3]) == 2


def test_boundary_goes_to_class_two(linear_classifier):
    clf = linear_classifier([1.0, 0.0], tau=-0.5)
    assert predict(clf, [0.5, 0.0]) == 2
    assert predict(clf, [0.75, 0.0]) == 1


def test_dual_norm_examples():
    v = [3.0, -4.0]
    assert dual_norm(1, v) == 4.0
    assert dual_norm(2, v) == 5.0
    assert dual_norm(math.inf, v) == 7.0
    with pytest.raises(UnsupportedNormError):
        dual_norm(3, v)


def test_linear_radius(linear_classifier):
    clf = linear_classifier([1.0, 0.0])
    cert = certified_radius(clf, np.array([2.0, 0.0]))
    assert cert.predicted_class == 1
    for p in NORMS:
        assert cert.radius(p) == pytest.approx(2.0)


def test_constant_positive_is_infinitely_robust(linear_classifier):
    clf = linear_classifier([0.0, 0.0], b=1.0)
    cert = certified_radius(clf, np.array([0.3, -7.0]))
    assert all(math.isinf(cert.radius(p)) for p in NORMS)


def test_class_two_radius_is_zero(linear_classifier):
    clf = linear_classifier([1.0, 0.0])
    cert = certified_radius(clf, np.array([-1.0, 0.0]))
    assert cert.predicted_class == 2
    assert all(cert.radius(p) == 0.0 for p in NORMS)


def test_recomputed_radius_matches(random_params):
    clf = _concat_classifier(random_params, d=3, seed=1)
    X = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    for cert in certify_batch(clf.with_tau(1.0), X):
        for p in NORMS:
            assert cert.recompute_radius(p) == cert.radius(p)
            assert cert.radius(p) >= 0.0


def test_radius_invariant_to_output_scaling(random_params):
    # float32 logits: near the boundary g + tau cancels, so margins under a tenth of |g| are skipped
    clf = _concat_classifier(random_params, d=4, seed=2)
    X = np.random.default_rng(1).uniform(-1, 1, size=(100, 4))
    checked = 0
    for tau in (0.0, -float(np.median(clf.raw_logits(X)))):
        base = certify_batch(clf.with_tau(tau), X)
        for c in (0.1, 1.0, 10.0, 100.0):
            scaled = FeatureConvexClassifier(clf.feature_map, scale_output_layer(clf.params, c), c * tau)
            for before, after in zip(base, certify_batch(scaled, X)):
                if before.shifted_logit <= 0 or before.shifted_logit < 0.1 * abs(before.logit):
                    continue
                for p in NORMS:
                    r0, r1 = before.radius(p), after.radius(p)
                    if math.isinf(r0):
                        continue
                    checked += 1
                    assert abs(r1 - r0) <= 1e-5 * r0, (tau, c, p)
    assert checked > 0


def test_radius_monotone_in_tau(random_params):
    clf = _concat_classifier(random_params, d=2, seed=3)
    X = np.random.default_rng(2).uniform(-1, 1, size=(40, 2))
    taus = np.linspace(-2.0, 2.0, 9)
    for p in NORMS:
        radii = np.array([[c.radius(p) for c in certify_batch(clf.with_tau(t), X, p)] for t in taus])
        radii = np.minimum(radii, 1e300)
        assert np.all(np.diff(radii, axis=0) >= 0)


def _sphere_directions(p, count):
    angles = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    order = np.inf if math.isinf(p) else p
    return directions / np.linalg.norm(directions, ord=order, axis=1, keepdims=True)


@pytest.mark.parametrize("kind", ["identity", "concat"])
def test_certificates_hold_on_a_dense_sphere(random_params, kind):
    rng = np.random.default_rng(5)
    if kind == "identity":
        clf = FeatureConvexClassifier(identity_map(2), random_params(2, (16, 8), seed=7))
    else:
        clf = _concat_classifier(random_params, d=2, seed=7)
    probes = rng.uniform(-1, 1, size=(400, 2))
    clf = clf.with_tau(-float(np.median(clf.raw_logits(probes))))
    exact = FeatureConvexClassifier(clf.feature_map, clf.params.as_dtype(np.float64), clf.tau)

    points = probes[clf.decision_values(probes) >= 0.05][:20]
    assert len(points) > 5
    for x in points:
        cert = certified_radius(clf, x)
        for p in NORMS:
            r = cert.radius(p)
            assert r > 0
            if math.isinf(r):
                continue
            candidates = x + 0.999 * r * _sphere_directions(p, 3600)
            assert np.all(exact.decision_values(candidates) > 0), (x, p, r)


def test_batch_matches_single_and_thread_count(random_params):
    clf = _concat_classifier(random_params, d=3, seed=4)
    X = np.random.default_rng(6).uniform(-1, 1, size=(600, 3))
    serial = certify_batch(clf, X, threads=1, chunk_size=128)
    parallel = certify_batch(clf, X, threads=4, chunk_size=128)
    assert len(serial) == len(X)
    for a, b in zip(serial, parallel):
        assert a.radii == b.radii and a.logit == b.logit
    for index in (0, 257, 599):
        single = certified_radius(clf, X[index])
        for p in NORMS:
            assert single.radius(p) == pytest.approx(serial[index].radius(p), rel=1e-5, abs=1e-7)


def test_certificates_frame(tmp_path, linear_classifier):
    clf = linear_classifier([1.0], b=0.0)
    certs = certify_batch(clf, np.array([[2.0], [-1.0]]), norms=[2])
    frame = certificates_frame(certs, true_labels=[1, 2])
    assert list(frame.columns) == CERTIFICATE_COLUMNS
    assert frame["predicted_class"].tolist() == [1, 2]
    assert frame["radius_l2"].tolist() == [2.0, 0.0]
    assert frame["radius_l1"].isna().all(), "norms that were not requested stay empty"

    const = linear_classifier([0.0], b=1.0)
    path = tmp_path / "certs.csv"
    certificates_frame(certify_batch(const, np.zeros((1, 1)))).to_csv(path, index=False)
    assert "inf" in path.read_text()
    assert math.isinf(pd.read_csv(path)["radius_l2"][0])


def test_non_finite_weights_raise_numeric_error(linear_classifier):
    clf = linear_classifier([1.0], b=0.0)
    broken = FeatureConvexClassifier(clf.feature_map, clf.params.replace({"b2": np.array([np.inf], np.float32)}))
    with pytest.raises(NumericError):
        certified_radius(broken, np.array([1.0]))


def test_unprojected_params_rejected(random_params):
    params = random_params(2, (4,), seed=0)
    bad = params.replace({"A2": -np.ones_like(params["A2"])})
    with pytest.raises(ConfigurationError):
        FeatureConvexClassifier(identity_map(2), bad)
    assert FeatureConvexClassifier(identity_map(2), project_nonnegative(bad)).params.is_projected()


def test_classifier_round_trip(tmp_path, random_params):
    clf = _concat_classifier(random_params, d=3, seed=8, tau=0.3125)
    path = tmp_path / "clf.fcc"
    save_classifier(clf, path)
    loaded = load_classifier(path)
    assert loaded.tau == clf.tau
    assert loaded.feature_map.kind == clf.feature_map.kind
    assert loaded.feature_map.mu.tobytes() == clf.feature_map.mu.tobytes()
    X = np.random.default_rng(3).uniform(-1, 1, size=(20, 3))
    for a, b in zip(certify_batch(clf, X), certify_batch(loaded, X)):
        assert a.radii == b.radii


def test_load_classifier_rejects_bare_network(tmp_path, random_params):
    params = random_params(2, (4,), seed=0)
    path = tmp_path / "net.fcc"
    icnn_save(params, params.spec, path)
    with pytest.raises(ModelFormatError):
        load_classifier(path)


def test_certification_time_is_positive(linear_classifier):
    seconds = measure_certification_time(linear_classifier([1.0, 1.0]), np.ones((5, 2)))
    assert 0.0 < seconds < 1.0
