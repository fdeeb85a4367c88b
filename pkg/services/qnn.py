"""
QNN Module - quaternion layers on a reverse-mode tape.

Activations are float64 arrays whose trailing axis holds the four quaternion
components; the leading axis is the batch. Weights share parameters through the
Hamilton product, i.e. each quaternion weight acts as its 4x4 real block
left_matrix(w). Gradients are collected on a Tape: every primitive records its
inputs, its output and a vector-Jacobian product, and backward() walks the
records once in reverse order.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import chi

from services.errors import (
    DimensionMismatchError, InputError, InvalidConfigError, NonFiniteInputError,
    NonScalarLossError,
)
from services.quatcore import HAMILTON_BASIS, left_matrix

logger = logging.getLogger(__name__)

RMSPROP_RHO = 0.99
RMSPROP_EPS = 1e-8
LEAKY_SLOPE = 0.2
FD_STEP = 1e-4
FD_REL_TOL = 1e-4
FD_ABS_TOL = 1e-7

PARAM_KINDS = ("qlinear", "qconv2d", "qdeconv2d")
LAYER_KINDS = PARAM_KINDS + ("activation", "reshape", "flatten", "real_part", "pure")
ACTIVATIONS = ("relu", "leaky_relu", "tanh")

# kinds whose weight gradient is negated while active (test hook)
_FAULTS = set()


@contextmanager
def inject_fault(kind: str) -> Iterator[None]:
    """Flip the sign of the weight gradient of every layer of the given kind."""
    _FAULTS.add(kind)
    try:
        yield
    finally:
        _FAULTS.discard(kind)


@dataclass
class ParamTensor:
    """Named quaternion tensor; data has shape (*shape, 4)."""

    name: str
    shape: Tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.data = np.array(self.data, dtype=float)
        if self.data.shape != self.shape + (4,):
            raise DimensionMismatchError(
                f"Parameter {self.name} expects data of shape {self.shape + (4,)}, got {self.data.shape}."
            )
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteInputError(f"Parameter {self.name} has non-finite values.")

    @classmethod
    def zeros(cls, name: str, shape: Sequence[int]) -> "ParamTensor":
        return cls(name, tuple(shape), np.zeros(tuple(shape) + (4,)))

    def components(self) -> List[List[float]]:
        """Four row-major component arrays (w, x, y, z)."""
        return [self.data[..., c].reshape(-1).tolist() for c in range(4)]

    @classmethod
    def from_components(cls, name: str, shape: Sequence[int], components) -> "ParamTensor":
        shape = tuple(int(s) for s in shape)
        arrays = [np.asarray(c, dtype=float) for c in components]
        size = int(np.prod(shape))
        if len(arrays) != 4 or any(a.size != size for a in arrays):
            raise DimensionMismatchError(f"Parameter {name} needs four component arrays of length {size}.")
        data = np.stack([a.reshape(shape) for a in arrays], axis=-1)
        return cls(name, shape, data)

    def max_abs(self) -> float:
        return float(np.abs(self.data).max(initial=0.0))


# Tape

@dataclass
class Node:
    id: int
    value: np.ndarray
    param: Optional[ParamTensor] = None
    grad: Optional[np.ndarray] = None


@dataclass
class _Record:
    op: str
    inputs: Tuple[int, ...]
    output: int
    vjp: Callable[[np.ndarray], Tuple[np.ndarray, ...]]


@dataclass
class Tape:
    nodes: List[Node] = field(default_factory=list)
    records: List[_Record] = field(default_factory=list)
    visited: int = 0

    def _new(self, value, param: Optional[ParamTensor] = None) -> Node:
        node = Node(len(self.nodes), np.asarray(value, dtype=float), param)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._new(np.array(value, dtype=float))

    def param(self, p: ParamTensor) -> Node:
        return self._new(p.data, p)

    def record(self, op: str, inputs: Sequence[Node], value, vjp) -> Node:
        node = self._new(value)
        self.records.append(_Record(op, tuple(n.id for n in inputs), node.id, vjp))
        return node


def backward(tape: Tape, loss: Node) -> Dict[str, np.ndarray]:
    """
    Reverse sweep from a scalar real loss.

    Returns:
        dict: parameter name -> gradient with the parameter's data shape
    """
    if loss.value.shape != ():
        raise NonScalarLossError(f"Loss must be a real scalar, got shape {loss.value.shape}.")
    grads: Dict[int, np.ndarray] = {loss.id: np.ones(())}
    tape.visited = 0
    for rec in reversed(tape.records):
        tape.visited += 1
        g = grads.get(rec.output)
        if g is None:
            continue
        for node_id, d in zip(rec.inputs, rec.vjp(g)):
            if d is None:
                continue
            grads[node_id] = grads[node_id] + d if node_id in grads else d

    result: Dict[str, np.ndarray] = {}
    for node in tape.nodes:
        node.grad = grads.get(node.id)
        if node.param is None:
            continue
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        name = node.param.name
        result[name] = result[name] + g if name in result else g
    return result


# Primitives

def qlinear(tape: Tape, x: Node, weight: Node, bias: Node) -> Node:
    """y[..., o] = sum_i weight[o, i] * x[..., i] + bias[o] (Hamilton products)."""
    W, xv = weight.value, x.value
    if xv.shape[-2:] != (W.shape[1], 4):
        raise DimensionMismatchError(f"qlinear expects {W.shape[1]} input quaternions, got shape {xv.shape}.")
    L = left_matrix(W)
    out = np.einsum("oipr,...ir->...op", L, xv) + bias.value

    def vjp(g):
        g2 = g.reshape(-1, W.shape[0], 4)
        x2 = xv.reshape(-1, W.shape[1], 4)
        dx = np.einsum("oipr,...op->...ir", L, g)
        dW = np.einsum("nop,nir,cpr->oic", g2, x2, HAMILTON_BASIS)
        if "qlinear" in _FAULTS:
            dW = -dW
        return dx, dW, g2.sum(axis=0)

    return tape.record("qlinear", (x, weight, bias), out, vjp)


def _check_conv_geometry(size: int, kernel: int, stride: int, padding: int) -> None:
    if stride < 1 or padding < 0 or kernel < 1:
        raise InputError(f"Invalid convolution geometry: kernel {kernel}, stride {stride}, padding {padding}.")
    if size + 2 * padding < kernel:
        raise InputError(f"Kernel {kernel} does not fit input of size {size} with padding {padding}.")


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv_forward(x: np.ndarray, W: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """x (B, I, H, W, 4), W (O, I, kh, kw, 4) -> (B, O, Ho, Wo, 4), no bias."""
    _, _, kh, kw, _ = W.shape
    _check_conv_geometry(x.shape[2], kh, stride, padding)
    _check_conv_geometry(x.shape[3], kw, stride, padding)
    if x.shape[1] != W.shape[1]:
        raise DimensionMismatchError(f"Convolution expects {W.shape[1]} input channels, got {x.shape[1]}.")
    win = _windows(x, kh, kw, stride, padding)
    return np.einsum("oiuvpr,bihwruv->bohwp", left_matrix(W), win, optimize=True)


def conv_input_grad(g: np.ndarray, W: np.ndarray, x_shape: Tuple[int, ...],
                    stride: int, padding: int) -> np.ndarray:
    """Adjoint of conv_forward in its input, evaluated at g (B, O, Ho, Wo, 4)."""
    batch, channels, height, width, _ = x_shape
    _, _, kh, kw, _ = W.shape
    _, _, ho, wo, _ = g.shape
    L = left_matrix(W)
    dxp = np.zeros((batch, channels, height + 2 * padding, width + 2 * padding, 4))
    for u in range(kh):
        for v in range(kw):
            contrib = np.einsum("oipr,bohwp->bihwr", L[:, :, u, v], g)
            dxp[:, :, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride] += contrib
    return dxp[:, :, padding:padding + height, padding:padding + width]


def conv_weight_grad(x: np.ndarray, g: np.ndarray, w_shape: Tuple[int, ...],
                     stride: int, padding: int) -> np.ndarray:
    _, _, kh, kw, _ = w_shape
    win = _windows(x, kh, kw, stride, padding)
    outer = np.einsum("bohwp,bihwruv->oiuvpr", g, win, optimize=True)
    return np.einsum("oiuvpr,cpr->oiuvc", outer, HAMILTON_BASIS)


def qconv2d(tape: Tape, x: Node, weight: Node, bias: Node, stride: int = 1, padding: int = 0) -> Node:
    W, xv = weight.value, x.value
    out = conv_forward(xv, W, stride, padding) + bias.value[None, :, None, None, :]

    def vjp(g):
        dW = conv_weight_grad(xv, g, W.shape, stride, padding)
        if "qconv2d" in _FAULTS:
            dW = -dW
        return conv_input_grad(g, W, xv.shape, stride, padding), dW, g.sum(axis=(0, 2, 3))

    return tape.record("qconv2d", (x, weight, bias), out, vjp)


def deconv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def qdeconv2d(tape: Tape, x: Node, weight: Node, bias: Node, stride: int = 1, padding: int = 0) -> Node:
    """
    Transposed quaternion convolution: the adjoint of qconv2d.

    weight has shape (I, O, kh, kw, 4) and maps I input channels to O outputs;
    qconv2d with the same weight maps O channels back to I.
    """
    W, xv = weight.value, x.value
    if xv.shape[1] != W.shape[0]:
        raise DimensionMismatchError(f"Deconvolution expects {W.shape[0]} input channels, got {xv.shape[1]}.")
    _, out_channels, kh, kw, _ = W.shape
    height = deconv_output_size(xv.shape[2], kh, stride, padding)
    width = deconv_output_size(xv.shape[3], kw, stride, padding)
    if stride < 1 or padding < 0 or height < 1 or width < 1:
        raise InputError(f"Invalid deconvolution geometry: stride {stride}, padding {padding}.")
    out_shape = (xv.shape[0], out_channels, height, width, 4)
    out = conv_input_grad(xv, W, out_shape, stride, padding) + bias.value[None, :, None, None, :]

    def vjp(g):
        dW = conv_weight_grad(g, xv, W.shape, stride, padding)
        if "qdeconv2d" in _FAULTS:
            dW = -dW
        return conv_forward(g, W, stride, padding), dW, g.sum(axis=(0, 2, 3))

    return tape.record("qdeconv2d", (x, weight, bias), out, vjp)


def activation(tape: Tape, x: Node, kind: str, slope: float = LEAKY_SLOPE) -> Node:
    """Split (componentwise) activation."""
    xv = x.value
    if kind == "relu":
        out = np.maximum(xv, 0.0)
        deriv = (xv > 0).astype(float)
    elif kind == "leaky_relu":
        out = np.where(xv > 0, xv, slope * xv)
        deriv = np.where(xv > 0, 1.0, slope)
    elif kind == "tanh":
        out = np.tanh(xv)
        deriv = 1.0 - out * out
    else:
        raise InvalidConfigError(f"Unknown activation {kind!r}.")
    return tape.record(kind, (x,), out, lambda g: (g * deriv,))


def reshape(tape: Tape, x: Node, shape: Sequence[int]) -> Node:
    original = x.value.shape
    return tape.record("reshape", (x,), x.value.reshape(tuple(shape)), lambda g: (g.reshape(original),))


def component(tape: Tape, x: Node, index: int) -> Node:
    """Real array of one quaternion component."""
    def vjp(g):
        d = np.zeros(x.value.shape)
        d[..., index] = g
        return (d,)

    return tape.record("component", (x,), x.value[..., index].copy(), vjp)


def real_part(tape: Tape, x: Node) -> Node:
    return component(tape, x, 0)


def pure(tape: Tape, x: Node) -> Node:
    """Zero the real part."""
    mask = np.array([0.0, 1.0, 1.0, 1.0])
    return tape.record("pure", (x,), x.value * mask, lambda g: (g * mask,))


def add(tape: Tape, a: Node, b: Node) -> Node:
    return tape.record("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(tape: Tape, a: Node, b: Node) -> Node:
    return tape.record("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def neg(tape: Tape, a: Node) -> Node:
    return tape.record("neg", (a,), -a.value, lambda g: (-g,))


def mul(tape: Tape, a: Node, b: Node) -> Node:
    """Elementwise real product of equally shaped arrays."""
    av, bv = a.value, b.value
    return tape.record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def mean(tape: Tape, x: Node) -> Node:
    size = x.value.size
    shape = x.value.shape
    return tape.record("mean", (x,), np.array(x.value.mean()), lambda g: (np.full(shape, g / size),))


def total(tape: Tape, x: Node) -> Node:
    shape = x.value.shape
    return tape.record("sum", (x,), np.array(x.value.sum()), lambda g: (np.full(shape, float(g)),))


# Networks

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_features: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    activation: str = ""
    slope: float = LEAKY_SLOPE
    shape: Tuple[int, ...] = ()

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind, "out_features": self.out_features, "kernel": self.kernel,
            "stride": self.stride, "padding": self.padding, "activation": self.activation,
            "slope": self.slope, "shape": list(self.shape),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "LayerSpec":
        return cls(
            kind=data["kind"], out_features=int(data.get("out_features", 0)),
            kernel=int(data.get("kernel", 0)), stride=int(data.get("stride", 1)),
            padding=int(data.get("padding", 0)), activation=data.get("activation", ""),
            slope=float(data.get("slope", LEAKY_SLOPE)), shape=tuple(data.get("shape", ())),
        )


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack applied to per-sample inputs of shape input_shape (quaternion axis excluded)."""

    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()

    def shapes(self) -> List[Tuple[int, ...]]:
        """
        Per-sample output shape of every layer; validates composition.

        A real_part layer ends the quaternion part of the network and must come last.
        """
        shapes = []
        shape = self.input_shape
        for index, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise InvalidConfigError(f"Layer {index}: unknown kind {layer.kind!r}.")
            if shapes and self.layers[index - 1].kind == "real_part":
                raise InvalidConfigError("real_part must be the last layer.")
            if layer.kind == "qlinear":
                if len(shape) != 1 or layer.out_features < 1:
                    raise InvalidConfigError(f"Layer {index}: qlinear needs a flat input, got {shape}.")
                shape = (layer.out_features,)
            elif layer.kind in ("qconv2d", "qdeconv2d"):
                if len(shape) != 3 or layer.out_features < 1:
                    raise InvalidConfigError(f"Layer {index}: {layer.kind} needs (C, H, W) input, got {shape}.")
                _, h, w = shape
                if layer.kind == "qconv2d":
                    for size in (h, w):
                        _check_conv_geometry(size, layer.kernel, layer.stride, layer.padding)
                    h = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                    w = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                else:
                    h = deconv_output_size(h, layer.kernel, layer.stride, layer.padding)
                    w = deconv_output_size(w, layer.kernel, layer.stride, layer.padding)
                    if h < 1 or w < 1 or layer.stride < 1 or layer.padding < 0:
                        raise InvalidConfigError(f"Layer {index}: invalid deconvolution geometry.")
                shape = (layer.out_features, h, w)
            elif layer.kind == "activation":
                if layer.activation not in ACTIVATIONS:
                    raise InvalidConfigError(f"Layer {index}: unknown activation {layer.activation!r}.")
            elif layer.kind == "reshape":
                if int(np.prod(layer.shape)) != int(np.prod(shape)):
                    raise InvalidConfigError(f"Layer {index}: cannot reshape {shape} to {layer.shape}.")
                shape = tuple(layer.shape)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "real_part":
                if shape != (1,):
                    raise InvalidConfigError(f"Layer {index}: real_part expects a single quaternion, got {shape}.")
                shape = ()
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self) -> Tuple[int, ...]:
        shapes = self.shapes()
        return shapes[-1] if shapes else self.input_shape

    @property
    def scores(self) -> bool:
        """True when the network ends in a real score."""
        return bool(self.layers) and self.layers[-1].kind == "real_part"

    def param_shapes(self) -> List[Tuple[int, str, Tuple[int, ...]]]:
        result = []
        shape = self.input_shape
        for index, (layer, out) in enumerate(zip(self.layers, self.shapes())):
            if layer.kind == "qlinear":
                result.append((index, "weight", (layer.out_features, shape[0])))
            elif layer.kind == "qconv2d":
                result.append((index, "weight", (layer.out_features, shape[0], layer.kernel, layer.kernel)))
            elif layer.kind == "qdeconv2d":
                result.append((index, "weight", (shape[0], layer.out_features, layer.kernel, layer.kernel)))
            if layer.kind in PARAM_KINDS:
                result.append((index, "bias", (layer.out_features,)))
            shape = out
        return result

    def to_dict(self) -> Dict:
        return {"input_shape": list(self.input_shape), "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, data: Dict) -> "NetworkSpec":
        return cls(tuple(data["input_shape"]), tuple(LayerSpec.from_dict(d) for d in data["layers"]))


def quaternion_init(shape: Tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-scaled chi(4) modulus, random unit imaginary axis and uniform phase."""
    scale = 1.0 / np.sqrt(2.0 * (fan_in + fan_out))
    modulus = chi.rvs(4, loc=0.0, scale=scale, size=shape, random_state=rng)
    axis = rng.uniform(-1.0, 1.0, size=shape + (3,))
    axis /= np.sqrt(np.sum(axis * axis, axis=-1, keepdims=True) + 1e-4)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    return np.concatenate([
        (modulus * np.cos(phase))[..., None],
        (modulus * np.sin(phase))[..., None] * axis,
    ], axis=-1)


class QNetwork:
    """A NetworkSpec together with its named parameters."""

    def __init__(self, spec: NetworkSpec, params: Dict[str, ParamTensor], prefix: str):
        self.spec = spec
        self.params = params
        self.prefix = prefix
        for index, role, shape in spec.param_shapes():
            name = self.param_name(index, role)
            if name not in params:
                raise InvalidConfigError(f"Missing parameter {name}.")
            if params[name].shape != shape:
                raise DimensionMismatchError(f"Parameter {name} has shape {params[name].shape}, expected {shape}.")

    def param_name(self, index: int, role: str) -> str:
        return f"{self.prefix}.{index}.{role}"

    @classmethod
    def create(cls, spec: NetworkSpec, prefix: str, rng: np.random.Generator) -> "QNetwork":
        params = {}
        for index, role, shape in spec.param_shapes():
            name = f"{prefix}.{index}.{role}"
            if role == "bias":
                params[name] = ParamTensor.zeros(name, shape)
                continue
            layer = spec.layers[index]
            receptive = layer.kernel * layer.kernel if layer.kind != "qlinear" else 1
            if layer.kind == "qdeconv2d":
                fan_in, fan_out = shape[0] * receptive, shape[1] * receptive
            else:
                fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
            params[name] = ParamTensor(name, shape, quaternion_init(shape, fan_in, fan_out, rng))
        return cls(spec, params, prefix)

    @classmethod
    def zeros(cls, spec: NetworkSpec, prefix: str) -> "QNetwork":
        params = {f"{prefix}.{i}.{role}": ParamTensor.zeros(f"{prefix}.{i}.{role}", shape)
                  for i, role, shape in spec.param_shapes()}
        return cls(spec, params, prefix)

    def forward(self, tape: Tape, x: Node) -> Node:
        batch = x.value.shape[0]
        if x.value.shape[1:] != self.spec.input_shape + (4,):
            raise DimensionMismatchError(
                f"{self.prefix} expects samples of shape {self.spec.input_shape + (4,)}, got {x.value.shape[1:]}."
            )
        for index, layer in enumerate(self.spec.layers):
            if layer.kind in PARAM_KINDS:
                weight = tape.param(self.params[self.param_name(index, "weight")])
                bias = tape.param(self.params[self.param_name(index, "bias")])
                if layer.kind == "qlinear":
                    x = qlinear(tape, x, weight, bias)
                elif layer.kind == "qconv2d":
                    x = qconv2d(tape, x, weight, bias, layer.stride, layer.padding)
                else:
                    x = qdeconv2d(tape, x, weight, bias, layer.stride, layer.padding)
            elif layer.kind == "activation":
                x = activation(tape, x, layer.activation, layer.slope)
            elif layer.kind == "reshape":
                x = reshape(tape, x, (batch,) + tuple(layer.shape) + (4,))
            elif layer.kind == "flatten":
                x = reshape(tape, x, (batch, -1, 4))
            elif layer.kind == "real_part":
                x = reshape(tape, real_part(tape, x), (batch,))
            elif layer.kind == "pure":
                x = pure(tape, x)
        return x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        tape = Tape()
        return self.forward(tape, tape.constant(x)).value

    def copy(self) -> "QNetwork":
        params = {name: ParamTensor(p.name, p.shape, p.data.copy()) for name, p in self.params.items()}
        return QNetwork(self.spec, params, self.prefix)

    def max_abs_param(self) -> float:
        return max((p.max_abs() for p in self.params.values()), default=0.0)

    def to_dict(self) -> Dict:
        layers = [
            {"name": p.name, "kind": self.spec.layers[int(p.name.split(".")[-2])].kind,
             "shape": list(p.shape), "components": p.components()}
            for p in self.params.values()
        ]
        return {"spec": self.spec.to_dict(), "layers": layers}

    @classmethod
    def from_dict(cls, data: Dict, prefix: str) -> "QNetwork":
        spec = NetworkSpec.from_dict(data["spec"])
        params = {}
        for entry in data["layers"]:
            p = ParamTensor.from_components(entry["name"], entry["shape"], entry["components"])
            params[p.name] = p
        return cls(spec, params, prefix)


# Architectures

def mlp_generator_spec(noise_dim: int, hidden: int, out_dim: int) -> NetworkSpec:
    return NetworkSpec((noise_dim,), (
        LayerSpec("qlinear", out_features=hidden),
        LayerSpec("activation", activation="relu"),
        LayerSpec("qlinear", out_features=hidden),
        LayerSpec("activation", activation="relu"),
        LayerSpec("qlinear", out_features=out_dim),
        LayerSpec("activation", activation="tanh"),
    ))


def mlp_critic_spec(dim: int, hidden: int) -> NetworkSpec:
    return NetworkSpec((dim,), (
        LayerSpec("qlinear", out_features=hidden),
        LayerSpec("activation", activation="leaky_relu"),
        LayerSpec("qlinear", out_features=hidden),
        LayerSpec("activation", activation="leaky_relu"),
        LayerSpec("qlinear", out_features=1),
        LayerSpec("real_part"),
    ))


def conv_generator_spec(noise_dim: int, channels: int, side: int = 8) -> NetworkSpec:
    """noise -> (channels, side/4, side/4) -> two stride-2 deconvolutions -> pure (side*side,) patch."""
    base = side // 4
    return NetworkSpec((noise_dim,), (
        LayerSpec("qlinear", out_features=channels * base * base),
        LayerSpec("activation", activation="relu"),
        LayerSpec("reshape", shape=(channels, base, base)),
        LayerSpec("qdeconv2d", out_features=max(channels // 2, 1), kernel=4, stride=2, padding=1),
        LayerSpec("activation", activation="relu"),
        LayerSpec("qdeconv2d", out_features=1, kernel=4, stride=2, padding=1),
        LayerSpec("activation", activation="tanh"),
        LayerSpec("pure"),
        LayerSpec("reshape", shape=(side * side,)),
    ))


def conv_critic_spec(channels: int, side: int = 8) -> NetworkSpec:
    return NetworkSpec((side * side,), (
        LayerSpec("reshape", shape=(1, side, side)),
        LayerSpec("qconv2d", out_features=channels, kernel=4, stride=2, padding=1),
        LayerSpec("activation", activation="leaky_relu"),
        LayerSpec("qconv2d", out_features=2 * channels, kernel=4, stride=2, padding=1),
        LayerSpec("activation", activation="leaky_relu"),
        LayerSpec("flatten"),
        LayerSpec("qlinear", out_features=1),
        LayerSpec("real_part"),
    ))


# Optimisation

@dataclass
class RMSPropState:
    lr: float
    rho: float = RMSPROP_RHO
    eps: float = RMSPROP_EPS
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(state: RMSPropState, params: Dict[str, ParamTensor], grads: Dict[str, np.ndarray],
                 ascend: bool = False) -> Dict[str, ParamTensor]:
    """
    v <- rho v + (1 - rho) g^2 ;  w <- w -/+ lr g / (sqrt(v) + eps), in place.

    Args:
        ascend: step along the gradient instead of against it
    """
    sign = 1.0 if ascend else -1.0
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionMismatchError(f"Gradient for {name} has shape {g.shape}, expected {p.data.shape}.")
        v = state.v.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.rho * v + (1.0 - state.rho) * g * g
        state.v[name] = v
        p.data += sign * state.lr * g / (np.sqrt(v) + state.eps)
    return params


def clip_params(params: Dict[str, ParamTensor], c: float) -> Dict[str, ParamTensor]:
    """Clamp every real component into [-c, c] in place."""
    if c <= 0:
        raise InputError(f"Clipping bound must be positive, got {c}.")
    for p in params.values():
        np.clip(p.data, -c, c, out=p.data)
    return params


# Lipschitz bounds

def real_block_matrix(weight: np.ndarray) -> np.ndarray:
    """(O, I, 4) quaternion matrix -> (4O, 4I) real matrix."""
    L = left_matrix(weight)
    out, inp = weight.shape[:2]
    return L.transpose(0, 2, 1, 3).reshape(4 * out, 4 * inp)


def layer_spectral_norms(kind: str, weight: np.ndarray) -> List[float]:
    """Spectral norm of the real block of every kernel tap (one entry for qlinear)."""
    if kind == "qlinear":
        return [float(np.linalg.norm(real_block_matrix(weight), 2))]
    norms = []
    for u in range(weight.shape[2]):
        for v in range(weight.shape[3]):
            norms.append(float(np.linalg.norm(real_block_matrix(weight[:, :, u, v]), 2)))
    return norms


def clipped_norm_bound(weight_shape: Tuple[int, ...], c: float) -> float:
    """Bound on each tap's spectral norm once every component lies in [-c, c]."""
    return 4.0 * c * float(np.sqrt(weight_shape[0] * weight_shape[1]))


def lipschitz_upper_bound(network: QNetwork) -> float:
    """Product over layers of sum-over-taps spectral norms; activations are 1-Lipschitz."""
    bound = 1.0
    for index, layer in enumerate(network.spec.layers):
        if layer.kind in PARAM_KINDS:
            weight = network.params[network.param_name(index, "weight")].data
            bound *= sum(layer_spectral_norms(layer.kind, weight))
        elif layer.kind == "activation" and layer.activation == "leaky_relu":
            bound *= max(1.0, abs(layer.slope))
    return bound


# Finite-difference checks

@dataclass
class LayerCheck:
    layer: str
    max_abs: float
    max_rel: float
    passed: bool

    def to_dict(self) -> Dict:
        return {"layer": self.layer, "max_abs_err": self.max_abs, "max_rel_err": self.max_rel, "passed": self.passed}


@dataclass
class GradcheckReport:
    seed: int
    arch: str
    checks: List[LayerCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failing(self) -> List[str]:
        return [c.layer for c in self.checks if not c.passed]

    def worst(self) -> Optional[LayerCheck]:
        failing = [c for c in self.checks if not c.passed]
        pool = failing or self.checks
        if not pool:
            return None
        return max(pool, key=lambda c: c.max_rel)

    def to_dict(self) -> Dict:
        worst = self.worst()
        return {
            "seed": self.seed, "arch": self.arch, "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "failing": self.failing,
            "worst_layer": worst.layer if worst else None,
        }


def finite_difference_check(label: str, params: Dict[str, ParamTensor],
                            loss_fn: Callable[[Tape], Node], eps: float = FD_STEP) -> LayerCheck:
    """
    Compare tape gradients against central differences on every real component.

    loss_fn builds the scalar loss on a fresh tape from the current parameter data.
    """
    tape = Tape()
    analytic = backward(tape, loss_fn(tape))
    max_abs = max_rel = 0.0
    passed = True
    for name, p in params.items():
        grad = analytic.get(name, np.zeros_like(p.data))
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            plus = float(loss_fn(Tape()).value)
            flat[k] = saved - eps
            minus = float(loss_fn(Tape()).value)
            flat[k] = saved
            numeric = (plus - minus) / (2.0 * eps)
            a = float(grad.reshape(-1)[k])
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-300)
            max_abs = max(max_abs, abs_err)
            if abs_err > FD_ABS_TOL:
                max_rel = max(max_rel, rel_err)
                if rel_err > FD_REL_TOL:
                    passed = False
    return LayerCheck(label, max_abs, max_rel, passed)


def _projection_loss(tape: Tape, out: Node, weights: np.ndarray) -> Node:
    if out.value.shape != weights.shape:
        raise DimensionMismatchError("Projection weights do not match the network output.")
    return total(tape, mul(tape, out, tape.constant(weights)))


def _network_case(label: str, spec: NetworkSpec, batch: int, rng: np.random.Generator) -> LayerCheck:
    net = QNetwork.create(spec, label, rng)
    for p in net.params.values():
        p.data += rng.normal(0.0, 0.1, size=p.data.shape)
    data = rng.normal(size=(batch,) + spec.input_shape + (4,))
    if not spec.param_shapes():
        # keep kinks of split activations out of the difference stencil
        data = np.where(data >= 0, data + 0.1, data - 0.1)
    x = ParamTensor(f"{label}.input", (batch,) + spec.input_shape, data)
    out_shape = net(x.data).shape
    weights = rng.normal(size=out_shape)
    params = dict(net.params)
    params[x.name] = x

    def loss_fn(tape: Tape) -> Node:
        return _projection_loss(tape, net.forward(tape, tape.param(x)), weights)

    return finite_difference_check(label, params, loss_fn)


def gradcheck(seed: int = 0, arch: str = "small") -> GradcheckReport:
    """
    Finite-difference suite over every layer kind.

    Args:
        arch: "small" checks single layers and a 3-layer critic; "default" adds
            the full-size generator and critic stacks used for training.
    """
    if arch not in ("small", "default"):
        raise InvalidConfigError(f"Unknown gradcheck architecture {arch!r}.")
    rng = np.random.default_rng(seed)
    report = GradcheckReport(seed=seed, arch=arch)
    cases = [
        ("qlinear", NetworkSpec((3,), (LayerSpec("qlinear", out_features=2),))),
        ("qconv2d", NetworkSpec((2, 5, 5), (LayerSpec("qconv2d", out_features=2, kernel=3, stride=2, padding=1),))),
        ("qdeconv2d", NetworkSpec((2, 3, 3), (LayerSpec("qdeconv2d", out_features=2, kernel=4, stride=2, padding=1),))),
        ("relu", NetworkSpec((4,), (LayerSpec("activation", activation="relu"),))),
        ("leaky_relu", NetworkSpec((4,), (LayerSpec("activation", activation="leaky_relu"),))),
        ("tanh", NetworkSpec((4,), (LayerSpec("activation", activation="tanh"),))),
        ("pure", NetworkSpec((3,), (LayerSpec("pure"),))),
        ("critic3", mlp_critic_spec(2, 3)),
    ]
    if arch == "default":
        cases += [
            ("mlp_generator", mlp_generator_spec(2, 4, 1)),
            ("conv_generator", conv_generator_spec(2, 2)),
            ("conv_critic", conv_critic_spec(2)),
        ]
    for label, spec in cases:
        check = _network_case(label, spec, batch=2, rng=rng)
        logger.debug("gradcheck %s: max abs %.2e, max rel %.2e", label, check.max_abs, check.max_rel)
        report.checks.append(check)
    return report
