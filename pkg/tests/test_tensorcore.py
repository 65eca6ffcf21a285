import numpy as np
import pytest

from errors import ContractViolationError, NumericError, RejectedInputError
from tensorcore import Tape, evaluate, gradient, grad_check, signature


def test_evaluate_identity():
    outputs, tape = evaluate(lambda t, x: x, [np.array([1.0, 2.0])])
    assert np.array_equal(outputs[0], [1.0, 2.0])
    assert outputs[0].dtype == np.float32


def test_evaluate_relu():
    outputs, _ = evaluate(lambda t, x: t.relu(x), [np.array([-1.0, 0.0, 3.0])])
    assert np.array_equal(outputs[0], [0.0, 0.0, 3.0])


def test_evaluate_affine():
    params = {"A": np.array([[1.0, 0.0], [0.0, 2.0]]), "b": np.array([1.0, 1.0])}
    outputs, _ = evaluate(lambda t, x: t.affine(x, t.param("A"), t.param("b")), [np.array([1.0, 1.0])], params)
    assert np.array_equal(outputs[0], [2.0, 3.0])


def test_signature_mismatch_reports_dimensions():
    @signature((None, 3))
    def builder(tape, x):
        return tape.sum(x)

    with pytest.raises(RejectedInputError) as info:
        evaluate(builder, [np.zeros((2, 4))])
    assert info.value.expected == (None, 3)
    assert info.value.actual == (2, 4)


def test_affine_shape_mismatch_rejected():
    with pytest.raises(RejectedInputError):
        evaluate(lambda t, x: t.affine(x, t.param("W")), [np.zeros(3)], {"W": np.zeros((2, 4))})


def test_non_finite_input_rejected():
    with pytest.raises(NumericError):
        evaluate(lambda t, x: x, [np.array([1.0, np.nan])])


def test_gradient_of_linear_function():
    def builder(tape, x):
        return tape.weighted_sum(x, np.array([3.0, 2.0]))

    for point in ([0.0, 0.0], [5.0, -7.0]):
        _, tape = evaluate(builder, [np.array(point)])
        assert np.array_equal(gradient(tape).inputs[0], [3.0, 2.0])


def test_relu_subgradient_at_zero_is_zero():
    _, tape = evaluate(lambda t, x: t.sum(t.relu(x)), [np.array([0.0])])
    assert gradient(tape).inputs[0][0] == 0.0


def test_gradient_requires_scalar_output():
    _, tape = evaluate(lambda t, x: t.relu(x), [np.array([1.0, 2.0])])
    with pytest.raises(ContractViolationError):
        gradient(tape)


def test_gradient_seed_scales_result():
    _, tape = evaluate(lambda t, x: t.sum(t.scale(x, 3.0)), [np.array([1.0, 2.0])])
    assert np.array_equal(gradient(tape, seed=2.0).inputs[0], [6.0, 6.0])


def test_unused_parameter_gets_zero_gradient():
    def builder(tape, x):
        tape.param("unused")
        return tape.sum(x)

    _, tape = evaluate(builder, [np.ones(2)], {"unused": np.ones((2, 2))})
    assert np.array_equal(gradient(tape).params["unused"], np.zeros((2, 2)))


def test_add_broadcast_gradient_is_summed():
    def builder(tape, x):
        return tape.sum(tape.add(x, tape.param("b")))

    _, tape = evaluate(builder, [np.ones((4, 3))], {"b": np.zeros(3)})
    assert np.array_equal(gradient(tape).params["b"], [4.0, 4.0, 4.0])


def test_concat_gradient_splits():
    def builder(tape, x):
        return tape.weighted_sum(tape.concat(x, tape.abs(x)), np.array([[1.0, 2.0, 3.0, 4.0]]))

    _, tape = evaluate(builder, [np.array([[1.0, -1.0]])])
    assert np.array_equal(gradient(tape).inputs[0], [[1.0 + 3.0, 2.0 - 4.0]])


def test_replay_is_bit_exact(rng):
    params = {"W1": rng.normal(size=(8, 5)), "b1": rng.normal(size=8), "W2": rng.normal(size=(1, 8))}

    def builder(tape, x):
        h = tape.relu(tape.affine(x, tape.param("W1"), tape.param("b1")))
        return tape.sum(tape.affine(h, tape.param("W2")))

    _, tape = evaluate(builder, [rng.normal(size=(6, 5))], params)
    replayed = tape.replay()
    assert all(np.array_equal(a, b) for a, b in zip(tape.values, replayed))
    # every node's inputs precede it
    assert all(i < node_id for node_id, node in enumerate(tape.nodes) for i in node.inputs)


def test_evaluate_is_deterministic(rng):
    params = {"W": rng.normal(size=(4, 3))}
    x = rng.normal(size=(5, 3))

    def builder(tape, x):
        return tape.relu(tape.affine(x, tape.param("W")))

    first, _ = evaluate(builder, [x], params)
    second, _ = evaluate(builder, [x], params)
    assert np.array_equal(first[0], second[0])


def test_gradient_is_linear_in_composition(rng):
    params = {"W": rng.normal(size=(6, 4))}
    x = rng.normal(size=(3, 4))

    def f(tape, x):
        return tape.sum(tape.relu(tape.affine(x, tape.param("W"))))

    def g(tape, x):
        return tape.sum(tape.abs(x))

    def combined(tape, x):
        return tape.add(tape.scale(f(tape, x), 2.0), tape.scale(g(tape, x), -0.5))

    grads = []
    for builder in (f, g, combined):
        _, tape = evaluate(builder, [x], params)
        grads.append(gradient(tape))
    expected = 2.0 * grads[0].inputs[0] - 0.5 * grads[1].inputs[0]
    np.testing.assert_allclose(grads[2].inputs[0], expected, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(grads[2].params["W"], 2.0 * grads[0].params["W"], rtol=1e-6, atol=1e-6)


def test_grad_check_linear_map_is_exact():
    params = {"A": np.array([[3.0, 2.0]])}

    def builder(tape, x):
        return tape.sum(tape.affine(x, tape.param("A")))

    report = grad_check(builder, [np.array([[1.0, 2.0]])], tol=1e-4, fd_step=1e-3, params=params)
    assert report.passed
    assert report.max_error < 1e-9
    assert all(err >= 0 for err in report.errors.values())


def test_grad_check_random_mlp(rng):
    params = {
        "W1": rng.normal(size=(16, 6)), "b1": rng.normal(size=16),
        "W2": rng.normal(size=(8, 16)) / 4, "b2": rng.normal(size=8),
        "W3": rng.normal(size=(1, 8)), "b3": rng.normal(size=1),
    }

    def builder(tape, x):
        h = tape.relu(tape.affine(x, tape.param("W1"), tape.param("b1")))
        h = tape.relu(tape.affine(h, tape.param("W2"), tape.param("b2")))
        return tape.sum(tape.affine(h, tape.param("W3"), tape.param("b3")))

    report = grad_check(builder, [rng.normal(size=(4, 6))], tol=1e-4, fd_step=1e-3, params=params)
    assert report.passed, report.errors
    assert set(report.errors) <= {"input[0]", "W1", "b1", "W2", "b2", "W3", "b3"}


def test_grad_check_excludes_kink_coordinates():
    report = grad_check(lambda t, x: t.sum(t.relu(x)), [np.array([0.0, 1.0])], tol=1e-4, fd_step=1e-3)
    assert report.passed
    assert report.excluded == {"input[0]": [0]}
    assert report.checked["input[0]"] == 1


def test_grad_check_abs_away_from_kink():
    report = grad_check(lambda t, x: t.sum(t.abs(x)), [np.array([0.5, -2.0])], tol=1e-4)
    assert report.passed and report.max_error < 1e-9


def test_grad_check_rejects_bad_tolerances():
    with pytest.raises(ContractViolationError):
        grad_check(lambda t, x: t.sum(x), [np.ones(2)], tol=0.0)
    with pytest.raises(ContractViolationError):
        grad_check(lambda t, x: t.sum(x), [np.ones(2)], fd_step=-1.0)


def test_unbound_parameter_is_contract_violation():
    tape = Tape()
    with pytest.raises(ContractViolationError):
        tape.param("missing")
