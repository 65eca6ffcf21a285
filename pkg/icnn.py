"""
Input-convex ReLU network with optional input passthrough.

    x1   = ReLU(A1 z + b1)
    xl   = ReLU(Al x(l-1) + bl + Cl z)          l = 2 .. L-1
    g(z) = AL x(L-1) + bL + CL z

Al >= 0 for l >= 2 makes g convex in z. Passthrough matrices Cl exist only
for l >= 2; a C1 term would duplicate A1.

Model file layout (little-endian):
    8 bytes   magic  b"FCCMODEL"
    4 bytes   uint32 manifest length n
    n bytes   UTF-8 JSON manifest: format_version, kind, spec, tensors
              [{name, shape, constrained}], plus kind-specific fields
    ...       one raw float32 blob per manifest tensor, in manifest order
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

import numpy as np

from errors import ConfigurationError, ModelFormatError, ModelVersionError, RejectedInputError
from tensorcore import Tape, Var, as_tensor, evaluate, gradient, signature

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"FCCMODEL"
FORMAT_VERSION = "1.0"
CONSTRAINED_INIT_HIGH = 0.003


@dataclass(frozen=True)
class IcnnSpec:
    """Architecture of an input-convex network with scalar output."""

    input_dim: int
    hidden_dims: Tuple[int, ...] = (200, 50)
    passthrough: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.hidden_dims:
            raise ConfigurationError("at least one hidden layer is required (L >= 2)")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError(f"hidden dims must be >= 1, got {self.hidden_dims}")

    @property
    def depth(self) -> int:
        """Number of affine layers L."""
        return len(self.hidden_dims) + 1

    def layer_shapes(self) -> List[Tuple[str, Tuple[int, ...], bool]]:
        """(name, shape, constrained) for every tensor, in storage order."""
        widths = [self.input_dim, *self.hidden_dims, 1]
        shapes = []
        for layer in range(1, self.depth + 1):
            shapes.append((f"A{layer}", (widths[layer], widths[layer - 1]), layer >= 2))
            shapes.append((f"b{layer}", (widths[layer],), False))
            if layer >= 2 and self.passthrough:
                shapes.append((f"C{layer}", (widths[layer], self.input_dim), False))
        return shapes

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IcnnSpec":
        try:
            return cls(input_dim=int(data["input_dim"]), hidden_dims=tuple(data["hidden_dims"]),
                       passthrough=bool(data["passthrough"]), seed=int(data.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid network spec: {exc}") from exc


@dataclass
class IcnnParams:
    """Weights of one network; `constrained` names the matrices kept >= 0."""

    spec: IcnnSpec
    weights: Dict[str, np.ndarray]
    constrained: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        expected = self.spec.layer_shapes()
        if [name for name, _, _ in expected] != list(self.weights):
            raise ConfigurationError(
                f"parameter names {list(self.weights)} do not match the network layout")
        for name, shape, _ in expected:
            if self.weights[name].shape != shape:
                raise ConfigurationError(
                    f"parameter {name} has shape {self.weights[name].shape}, expected {shape}")
        if not self.constrained:
            self.constrained = tuple(name for name, _, flag in expected if flag)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.weights.values())).dtype

    def replace(self, weights: Mapping[str, np.ndarray]) -> "IcnnParams":
        merged = dict(self.weights)
        merged.update(weights)
        return IcnnParams(self.spec, merged, self.constrained)

    def copy(self) -> "IcnnParams":
        return IcnnParams(self.spec, {k: v.copy() for k, v in self.weights.items()}, self.constrained)

    def as_dtype(self, dtype) -> "IcnnParams":
        return IcnnParams(self.spec, {k: v.astype(dtype) for k, v in self.weights.items()},
                          self.constrained)

    def min_constrained(self) -> float:
        return min(float(self.weights[name].min()) for name in self.constrained)

    def is_projected(self) -> bool:
        return self.min_constrained() >= 0.0


def icnn_init(spec: IcnnSpec) -> IcnnParams:
    """Constrained matrices U[0, 0.003]; A1 and passthroughs U[-1/sqrt(fan_in), 1/sqrt(fan_in)]; zero biases."""
    rng = np.random.default_rng(spec.seed)
    weights: Dict[str, np.ndarray] = {}
    for name, shape, constrained in spec.layer_shapes():
        if name.startswith("b"):
            value = np.zeros(shape)
        elif constrained:
            value = rng.uniform(0.0, CONSTRAINED_INIT_HIGH, size=shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            value = rng.uniform(-bound, bound, size=shape)
        weights[name] = value.astype(np.float32)
    return IcnnParams(spec, weights)


def add_logits(tape: Tape, z: Var, spec: IcnnSpec) -> Var:
    """Record the network on `tape` for a batch z of shape (n, q); returns (n, 1) logits."""
    hidden = z
    for layer in range(1, spec.depth):
        pre = tape.affine(hidden, tape.param(f"A{layer}"), tape.param(f"b{layer}"))
        if layer >= 2 and spec.passthrough:
            pre = tape.add(pre, tape.affine(z, tape.param(f"C{layer}")))
        hidden = tape.relu(pre)
    last = spec.depth
    out = tape.affine(hidden, tape.param(f"A{last}"), tape.param(f"b{last}"))
    if spec.passthrough:
        out = tape.add(out, tape.affine(z, tape.param(f"C{last}")))
    return out


def logit_graph(spec: IcnnSpec):
    """Tape builder z -> logits for a batch of feature vectors."""

    @signature((None, spec.input_dim))
    def builder(tape: Tape, z: Var) -> Var:
        return add_logits(tape, z, spec)

    return builder


def _as_batch(params: IcnnParams, z: Any) -> np.ndarray:
    batch = np.asarray(z)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != params.spec.input_dim:
        raise RejectedInputError("feature vector dimension mismatch",
                                 expected=params.spec.input_dim, actual=batch.shape)
    return as_tensor(batch, params.dtype, "z")


def icnn_logits(params: IcnnParams, Z: Any) -> np.ndarray:
    outputs, _ = evaluate(logit_graph(params.spec), [_as_batch(params, Z)], params.weights, params.dtype)
    return outputs[0][:, 0]


def icnn_input_gradients(params: IcnnParams, Z: Any) -> Tuple[np.ndarray, np.ndarray]:
    """Logits and per-row input gradients for a batch; rows are independent so one backward pass suffices."""
    batch = _as_batch(params, Z)
    outputs, tape = evaluate(logit_graph(params.spec), [batch], params.weights, params.dtype)
    total = tape.sum(Var(tape, tape.output_ids[0]))
    tape.output_ids.append(total.id)
    grads = gradient(tape, len(tape.output_ids) - 1)
    return outputs[0][:, 0], grads.inputs[0]


def icnn_forward(params: IcnnParams, z: Any) -> float:
    z = np.asarray(z)
    if z.ndim != 1:
        raise RejectedInputError("icnn_forward expects a single vector", expected=1, actual=z.ndim)
    return float(icnn_logits(params, z)[0])


def icnn_input_gradient(params: IcnnParams, z: Any) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim != 1:
        raise RejectedInputError("icnn_input_gradient expects a single vector", expected=1, actual=z.ndim)
    return icnn_input_gradients(params, z)[1][0]


def project_nonnegative(params: IcnnParams) -> IcnnParams:
    """Clamp constrained matrices at 0; nonnegative entries are left bit-identical."""
    clamped = {name: np.where(params[name] < 0, params[name].dtype.type(0), params[name])
               for name in params.constrained}
    return params.replace(clamped)


def scale_output_layer(params: IcnnParams, factor: float) -> IcnnParams:
    if not factor > 0:
        raise ConfigurationError(f"scale factor must be positive, got {factor}")
    last = params.spec.depth
    names = [f"A{last}", f"b{last}"] + ([f"C{last}"] if params.spec.passthrough else [])
    return params.replace({n: (params[n] * params.dtype.type(factor)) for n in names})


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def write_model_file(path: Union[str, Path], kind: str, manifest: Dict[str, Any],
                     tensors: List[Tuple[str, np.ndarray, bool]]) -> None:
    header = dict(manifest)
    header["format_version"] = FORMAT_VERSION
    header["kind"] = kind
    header["tensors"] = [{"name": name, "shape": list(arr.shape), "constrained": flag}
                         for name, arr, flag in tensors]
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for _, arr, _ in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_model_file(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Parse a model file into (manifest, tensors by name)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MODEL_MAGIC):
        raise ModelFormatError("file shorter than the magic string", offset=len(raw))
    if raw[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelVersionError(f"bad magic {raw[:len(MODEL_MAGIC)]!r}, expected {MODEL_MAGIC!r}")
    offset = len(MODEL_MAGIC)
    if len(raw) < offset + 4:
        raise ModelFormatError("truncated manifest length", offset=offset)
    (length,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + length:
        raise ModelFormatError("truncated manifest", offset=len(raw))
    try:
        manifest = json.loads(raw[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable manifest ({exc})", offset=offset) from exc
    offset += length

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported format version {version!r}, expected {FORMAT_VERSION!r}")

    tensors: Dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if len(raw) < offset + nbytes:
            raise ModelFormatError(f"truncated tensor {entry['name']}", offset=len(raw))
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4,
                                               offset=offset).astype(np.float32).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ModelFormatError("trailing bytes after last tensor", offset=offset)
    return manifest, tensors


def params_from_file(manifest: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> IcnnParams:
    spec = IcnnSpec.from_dict(manifest.get("spec", {}))
    names = [name for name, _, _ in spec.layer_shapes()]
    missing = [name for name in names if name not in tensors]
    if missing:
        raise ModelFormatError(f"model file lacks tensors {missing}")
    constrained = tuple(e["name"] for e in manifest["tensors"] if e.get("constrained"))
    try:
        return IcnnParams(spec, {name: tensors[name] for name in names}, constrained)
    except ConfigurationError as exc:
        raise ModelFormatError(str(exc)) from exc


def icnn_tensors(params: IcnnParams) -> List[Tuple[str, np.ndarray, bool]]:
    return [(name, params[name], name in params.constrained) for name in params.weights]


def icnn_save(params: IcnnParams, spec: IcnnSpec, path: Union[str, Path]) -> None:
    if spec != params.spec:
        raise ConfigurationError("network layout does not describe these parameters")
    write_model_file(path, "icnn", {"spec": spec.to_dict()}, icnn_tensors(params))
    logger.info("Saved network (%d tensors) to %s", len(params.weights), path)


def icnn_load(path: Union[str, Path]) -> Tuple[IcnnParams, IcnnSpec]:
    manifest, tensors = read_model_file(path)
    params = params_from_file(manifest, tensors)
    return params, params.spec
