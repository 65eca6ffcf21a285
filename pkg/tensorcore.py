"""
Dense tensors and reverse-mode differentiation for the small op set the
feature-convex architecture needs.

Tensors are plain numpy arrays (float32 unless a 64-bit replica is requested).
A Tape records every primitive applied to its variables in execution order,
which is already a topological order; gradient() walks it backwards.

Example:
    @signature((None, 2))
    def builder(tape, x):
        return tape.sum(tape.relu(tape.affine(x, tape.param("W"), tape.param("b"))))

    outputs, tape = evaluate(builder, [x], params={"W": W, "b": b})
    grads = gradient(tape, 0)
    grads.params["W"]
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractViolationError, NumericError, RejectedInputError

logger = logging.getLogger(__name__)

Tensor = np.ndarray
DEFAULT_DTYPE = np.float32


def as_tensor(value: Any, dtype=DEFAULT_DTYPE, name: str = "tensor") -> Tensor:
    """Convert to a dense array of the requested float type and reject NaN/Inf."""
    arr = np.asarray(value, dtype=dtype)
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or infinite entries")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

class Primitive:
    """A differentiable operation: forward values and vector-Jacobian products."""

    name = "primitive"

    @staticmethod
    def forward(*values: np.ndarray, **attrs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(grad: np.ndarray, out: np.ndarray, *values: np.ndarray, **attrs) -> Tuple[np.ndarray, ...]:
        raise NotImplementedError


class Affine(Primitive):
    """y = x W^T (+ b), x of shape (features,) or (batch, features)."""

    name = "affine"

    @staticmethod
    def forward(x, w, b=None):
        out = x @ w.T
        if b is not None:
            out = out + b
        return out

    @staticmethod
    def backward(grad, out, x, w, b=None):
        gx = grad @ w
        if x.ndim == 1:
            gw = np.outer(grad, x)
        else:
            gw = grad.T @ x
        if b is None:
            return gx, gw
        gb = grad if grad.ndim == 1 else grad.sum(axis=0)
        return gx, gw, gb


class Add(Primitive):
    name = "add"

    @staticmethod
    def forward(a, b):
        return a + b

    @staticmethod
    def backward(grad, out, a, b):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Scale(Primitive):
    name = "scale"

    @staticmethod
    def forward(a, factor=1.0):
        return a * a.dtype.type(factor)

    @staticmethod
    def backward(grad, out, a, factor=1.0):
        return (grad * a.dtype.type(factor),)


class Relu(Primitive):
    name = "relu"

    @staticmethod
    def forward(a):
        return np.maximum(a, 0)

    @staticmethod
    def backward(grad, out, a):
        # subgradient 0 at the kink
        return (grad * (a > 0),)


class Abs(Primitive):
    name = "abs"

    @staticmethod
    def forward(a):
        return np.abs(a)

    @staticmethod
    def backward(grad, out, a):
        return (grad * np.sign(a),)


class Sum(Primitive):
    name = "sum"

    @staticmethod
    def forward(a, axis=None):
        return np.asarray(np.sum(a, axis=axis), dtype=a.dtype)

    @staticmethod
    def backward(grad, out, a, axis=None):
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).astype(a.dtype),)


class WeightedSum(Primitive):
    """Scalar sum(a * weights) with constant weights."""

    name = "weighted_sum"

    @staticmethod
    def forward(a, weights=None):
        return np.asarray(np.sum(a * weights.astype(a.dtype)), dtype=a.dtype)

    @staticmethod
    def backward(grad, out, a, weights=None):
        return (grad * weights.astype(a.dtype),)


class Concat(Primitive):
    """Concatenate along the last axis."""

    name = "concat"

    @staticmethod
    def forward(*values):
        return np.concatenate(values, axis=-1)

    @staticmethod
    def backward(grad, out, *values):
        bounds = np.cumsum([v.shape[-1] for v in values])[:-1]
        return tuple(np.split(grad, bounds, axis=-1))


PRIMITIVES: Dict[str, type] = {
    cls.name: cls for cls in (Affine, Add, Scale, Relu, Abs, Sum, WeightedSum, Concat)
}
LEAF_OPS = ("input", "param", "constant")


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    """One recorded operation: primitive name, input node ids and attributes."""

    op: str
    inputs: Tuple[int, ...] = ()
    name: Optional[str] = None
    attrs: Dict[str, Any] = field(default_factory=dict)


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __mul__(self, factor: float):
        return self.tape.scale(self, factor)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.id]
        return f"Var(id={self.id}, op={node.op}, shape={self.shape})"


class Tape:
    """Single-owner record of primitive operations and their values."""

    def __init__(self, dtype=DEFAULT_DTYPE, params: Optional[Mapping[str, np.ndarray]] = None):
        self.dtype = np.dtype(dtype)
        self.nodes: List[Node] = []
        self.values: List[np.ndarray] = []
        self.input_ids: List[int] = []
        self.param_ids: Dict[str, int] = {}
        self.output_ids: List[int] = []
        self._bound = dict(params or {})

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, op: str, inputs: Tuple[int, ...], value: np.ndarray,
                name: Optional[str] = None, **attrs) -> Var:
        self.nodes.append(Node(op, inputs, name, attrs))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def _coerce(self, operand: Union[Var, np.ndarray, float]) -> Var:
        if isinstance(operand, Var):
            if operand.tape is not self:
                raise ContractViolationError("Variable belongs to a different tape")
            return operand
        return self.constant(operand)

    # leaves -----------------------------------------------------------------

    def input(self, value: Any, name: Optional[str] = None) -> Var:
        var = self._record("input", (), as_tensor(value, self.dtype, name or "input"), name)
        self.input_ids.append(var.id)
        return var

    def param(self, name: str, value: Any = None) -> Var:
        if name in self.param_ids:
            return Var(self, self.param_ids[name])
        if value is None:
            if name not in self._bound:
                raise ContractViolationError(f"Parameter '{name}' is not bound to this tape")
            value = self._bound[name]
        var = self._record("param", (), as_tensor(value, self.dtype, name), name)
        self.param_ids[name] = var.id
        return var

    def constant(self, value: Any) -> Var:
        return self._record("constant", (), as_tensor(value, self.dtype, "constant"))

    # primitives -------------------------------------------------------------

    def _apply(self, primitive: type, operands: Sequence[Var], **attrs) -> Var:
        values = [self.values[v.id] for v in operands]
        out = primitive.forward(*values, **attrs)
        return self._record(primitive.name, tuple(v.id for v in operands), out, **attrs)

    def affine(self, x: Var, w: Var, b: Optional[Var] = None) -> Var:
        operands = [self._coerce(x), self._coerce(w)]
        if b is not None:
            operands.append(self._coerce(b))
        x_shape, w_shape = operands[0].shape, operands[1].shape
        if len(w_shape) != 2 or x_shape[-1] != w_shape[1]:
            raise RejectedInputError("affine: input features do not match weight columns",
                                     expected=w_shape[1] if len(w_shape) == 2 else "matrix",
                                     actual=x_shape[-1] if x_shape else x_shape)
        return self._apply(Affine, operands)

    def add(self, a, b) -> Var:
        return self._apply(Add, [self._coerce(a), self._coerce(b)])

    def scale(self, a, factor: float) -> Var:
        return self._apply(Scale, [self._coerce(a)], factor=float(factor))

    def relu(self, a) -> Var:
        return self._apply(Relu, [self._coerce(a)])

    def abs(self, a) -> Var:
        return self._apply(Abs, [self._coerce(a)])

    def concat(self, *parts) -> Var:
        operands = [self._coerce(p) for p in parts]
        leading = {p.shape[:-1] for p in operands}
        if len(leading) != 1:
            raise RejectedInputError("concat: leading dimensions differ", actual=sorted(leading))
        return self._apply(Concat, operands)

    def sum(self, a, axis: Optional[int] = None) -> Var:
        return self._apply(Sum, [self._coerce(a)], axis=axis)

    def weighted_sum(self, a, weights: Any) -> Var:
        a = self._coerce(a)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != a.shape:
            raise RejectedInputError("weighted_sum: weights shape mismatch",
                                     expected=a.shape, actual=weights.shape)
        return self._apply(WeightedSum, [a], weights=weights)

    # replay / reverse mode ----------------------------------------------------

    def relu_patterns(self) -> List[np.ndarray]:
        """Activation masks (pre-activation > 0) of every recorded ReLU, in tape order."""
        return [self.values[node.inputs[0]] > 0 for node in self.nodes if node.op == "relu"]

    def replay(self) -> List[np.ndarray]:
        """Recompute every non-leaf node from the stored leaves."""
        values: List[np.ndarray] = []
        for node_id, node in enumerate(self.nodes):
            if node.op in LEAF_OPS:
                values.append(self.values[node_id])
                continue
            primitive = PRIMITIVES[node.op]
            values.append(primitive.forward(*(values[i] for i in node.inputs), **node.attrs))
        return values

    def backward(self, output: Var, seed: float = 1.0) -> Dict[int, np.ndarray]:
        out_value = self.values[output.id]
        if out_value.size != 1:
            raise ContractViolationError(
                f"gradient requires a scalar output, got shape {out_value.shape}")
        grads: Dict[int, np.ndarray] = {output.id: np.full(out_value.shape, seed, dtype=self.dtype)}
        for node_id in range(output.id, -1, -1):
            grad = grads.get(node_id)
            node = self.nodes[node_id]
            if grad is None or node.op in LEAF_OPS:
                continue
            primitive = PRIMITIVES[node.op]
            in_values = [self.values[i] for i in node.inputs]
            in_grads = primitive.backward(grad, self.values[node_id], *in_values, **node.attrs)
            for input_id, in_grad in zip(node.inputs, in_grads):
                in_grad = np.asarray(in_grad, dtype=self.dtype)
                if input_id in grads:
                    grads[input_id] = grads[input_id] + in_grad
                else:
                    grads[input_id] = in_grad
        return grads


@dataclass
class Gradients:
    """Reverse-mode gradients of one scalar output."""

    inputs: List[np.ndarray]
    params: Dict[str, np.ndarray]


@dataclass
class GradReport:
    """Analytic vs central-difference comparison, one entry per input/parameter."""

    errors: Dict[str, float]
    max_error: float
    passed: bool
    tol: float
    checked: Dict[str, int] = field(default_factory=dict)
    excluded: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def excluded_count(self) -> int:
        return sum(len(v) for v in self.excluded.values())


# ---------------------------------------------------------------------------
# Graph evaluation
# ---------------------------------------------------------------------------

TapeBuilder = Callable[..., Union[Var, Sequence[Var]]]


def signature(*shapes: Tuple[Optional[int], ...]):
    """Declare the input shapes of a tape builder; None matches any extent."""

    def decorate(builder: TapeBuilder) -> TapeBuilder:
        builder.input_shapes = tuple(tuple(s) for s in shapes)
        return builder

    return decorate


def _check_signature(builder: TapeBuilder, inputs: Sequence[np.ndarray]) -> None:
    declared = getattr(builder, "input_shapes", None)
    if declared is None:
        return
    if len(declared) != len(inputs):
        raise RejectedInputError("wrong number of inputs", expected=len(declared), actual=len(inputs))
    for index, (want, value) in enumerate(zip(declared, inputs)):
        got = np.shape(value)
        if len(want) != len(got) or any(w is not None and w != g for w, g in zip(want, got)):
            raise RejectedInputError(f"input {index} has the wrong shape", expected=want, actual=got)


def evaluate(builder: TapeBuilder, inputs: Sequence[Any],
             params: Optional[Mapping[str, np.ndarray]] = None,
             dtype=DEFAULT_DTYPE) -> Tuple[List[np.ndarray], Tape]:
    """Run `builder(tape, *input_vars)` on a fresh tape and return (outputs, tape)."""
    _check_signature(builder, inputs)
    tape = Tape(dtype=dtype, params=params)
    input_vars = [tape.input(value, name=f"input[{i}]") for i, value in enumerate(inputs)]
    result = builder(tape, *input_vars)
    outputs = [result] if isinstance(result, Var) else list(result)
    tape.output_ids = [v.id for v in outputs]
    return [tape.values[v.id] for v in outputs], tape


def gradient(tape: Tape, output_index: int = 0, seed: float = 1.0) -> Gradients:
    """Gradients of one scalar output with respect to every input and parameter."""
    if not 0 <= output_index < len(tape.output_ids):
        raise ContractViolationError(f"tape has no output {output_index}")
    output = Var(tape, tape.output_ids[output_index])
    grads = tape.backward(output, seed)

    def lookup(node_id: int) -> np.ndarray:
        if node_id in grads:
            return grads[node_id]
        return np.zeros_like(tape.values[node_id])

    return Gradients(
        inputs=[lookup(i) for i in tape.input_ids],
        params={name: lookup(i) for name, i in tape.param_ids.items()},
    )


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / max(denom, 1e-12))


def grad_check(builder: TapeBuilder, inputs: Sequence[Any], tol: float = 1e-4,
               fd_step: float = 1e-3, params: Optional[Mapping[str, np.ndarray]] = None,
               max_coords: int = 32, seed: int = 0) -> GradReport:
    """Compare gradient() (32-bit) with central differences on a 64-bit replica.

    Coordinates whose +/- fd_step perturbation changes any ReLU activation
    pattern straddle a kink; they are excluded and reported instead of compared.
    """
    if tol <= 0 or fd_step <= 0:
        raise ContractViolationError("grad_check needs tol > 0 and fd_step > 0")

    _, tape = evaluate(builder, inputs, params)
    analytic = gradient(tape, 0)

    inputs64 = [np.asarray(v, dtype=np.float64) for v in inputs]
    params64 = {k: np.asarray(v, dtype=np.float64) for k, v in (params or {}).items()}

    def replica(ins, ps) -> Tuple[float, List[np.ndarray]]:
        outs, t = evaluate(builder, ins, ps, dtype=np.float64)
        return float(np.asarray(outs[0]).reshape(-1)[0]), t.relu_patterns()

    _, base_pattern = replica(inputs64, params64)
    rng = np.random.default_rng(seed)

    targets: List[Tuple[str, np.ndarray, Callable[[np.ndarray], Tuple[float, List[np.ndarray]]]]] = []
    for index, value in enumerate(inputs64):
        def run_input(perturbed, index=index):
            ins = list(inputs64)
            ins[index] = perturbed
            return replica(ins, params64)
        targets.append((f"input[{index}]", analytic.inputs[index], run_input))
    for name in analytic.params:
        def run_param(perturbed, name=name):
            ps = dict(params64)
            ps[name] = perturbed
            return replica(inputs64, ps)
        targets.append((name, analytic.params[name], run_param))

    errors: Dict[str, float] = {}
    checked: Dict[str, int] = {}
    excluded: Dict[str, List[int]] = {}
    for label, grad, run in targets:
        base = inputs64[int(label[6:-1])] if label.startswith("input[") else params64[label]
        size = base.size
        coords = np.arange(size) if size <= max_coords else np.sort(rng.choice(size, max_coords, replace=False))
        numeric, kept = [], []
        for coord in coords:
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[coord] += fd_step
            minus[coord] -= fd_step
            f_plus, pattern_plus = run(plus.reshape(base.shape))
            f_minus, pattern_minus = run(minus.reshape(base.shape))
            crosses_kink = any(
                not (np.array_equal(b, p) and np.array_equal(b, m))
                for b, p, m in zip(base_pattern, pattern_plus, pattern_minus)
            )
            if crosses_kink:
                excluded.setdefault(label, []).append(int(coord))
                continue
            numeric.append((f_plus - f_minus) / (2.0 * fd_step))
            kept.append(int(coord))
        checked[label] = len(kept)
        if kept:
            errors[label] = _relative_error(np.asarray(grad).reshape(-1)[kept], np.asarray(numeric))

    max_error = max(errors.values(), default=0.0)
    report = GradReport(errors=errors, max_error=max_error, passed=max_error <= tol,
                        tol=tol, checked=checked, excluded=excluded)
    logger.debug("grad_check max error %.3e over %d tensors (%d coords excluded)",
                 max_error, len(errors), report.excluded_count)
    return report
