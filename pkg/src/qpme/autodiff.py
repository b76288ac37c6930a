"""Minimal neural-network engine: MLP forward passes, order-2 directional
input jets, and reverse-mode parameter gradients.

Second derivatives in input space are obtained by propagating truncated
Taylor jets (value, first, second directional derivative) along one input
axis at a time.  The jet propagation itself is expressed through a small
set of differentiable primitives recorded on a tape, so the gradient with
respect to network parameters of any scalar built from jet quantities
falls out of a single reverse sweep (nested differentiation).

All arithmetic is float64.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised on dimension mismatches or invalid arguments."""


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss evaluation produces a non-finite value."""


# ---------------------------------------------------------------------------
# tape


def _unbroadcast(g, shape):
    """Reduce gradient g to `shape` by summing over broadcast axes."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    """Node in the computation tape holding a float64 array value."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    # keep numpy from absorbing Var into object arrays; arithmetic with
    # ndarrays must fall back to the reflected Var operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros(self.value.shape, dtype=np.float64)
        self.grad += _unbroadcast(g, self.value.shape)

    def backward(self):
        if self.value.shape != ():
            raise ContractError("backward() requires a scalar root")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._vjp is not None:
                node._vjp(node.grad)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            out = Var(self.value + other.value, (self, other))
            out._vjp = lambda g: (self._accumulate(g), other._accumulate(g))
        else:
            out = Var(self.value + other, (self,))
            out._vjp = lambda g: self._accumulate(g)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.value, (self,))
        out._vjp = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        if isinstance(other, Var):
            out = Var(self.value - other.value, (self, other))
            out._vjp = lambda g: (self._accumulate(g), other._accumulate(-g))
        else:
            out = Var(self.value - other, (self,))
            out._vjp = lambda g: self._accumulate(g)
        return out

    def __rsub__(self, other):
        out = Var(other - self.value, (self,))
        out._vjp = lambda g: self._accumulate(-g)
        return out

    def __mul__(self, other):
        if isinstance(other, Var):
            out = Var(self.value * other.value, (self, other))
            out._vjp = lambda g: (
                self._accumulate(g * other.value),
                other._accumulate(g * self.value),
            )
        else:
            c = np.asarray(other, dtype=np.float64)
            out = Var(self.value * c, (self,))
            out._vjp = lambda g: self._accumulate(g * c)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            inv = 1.0 / other.value
            out = Var(self.value * inv, (self, other))
            out._vjp = lambda g: (
                self._accumulate(g * inv),
                other._accumulate(-g * self.value * inv * inv),
            )
        else:
            c = 1.0 / np.asarray(other, dtype=np.float64)
            out = Var(self.value * c, (self,))
            out._vjp = lambda g: self._accumulate(g * c)
        return out

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        out = Var(other * inv, (self,))
        out._vjp = lambda g: self._accumulate(-g * np.asarray(other) * inv * inv)
        return out

    def __pow__(self, n):
        out = Var(self.value**n, (self,))
        out._vjp = lambda g: self._accumulate(g * n * self.value ** (n - 1))
        return out

    def __matmul__(self, other):
        if isinstance(other, Var):
            out = Var(self.value @ other.value, (self, other))
            out._vjp = lambda g: (
                self._accumulate(g @ other.value.T),
                other._accumulate(self.value.T @ g),
            )
        else:
            c = np.asarray(other, dtype=np.float64)
            out = Var(self.value @ c, (self,))
            out._vjp = lambda g: self._accumulate(g @ c.T)
        return out

    def __rmatmul__(self, other):
        c = np.asarray(other, dtype=np.float64)
        out = Var(c @ self.value, (self,))
        out._vjp = lambda g: self._accumulate(c.T @ g)
        return out


# ---------------------------------------------------------------------------
# dispatching primitives (work on Var or plain ndarray/scalar)


def softplus(x):
    """Numerically stable softplus: max(x,0) + log1p(exp(-|x|))."""
    if isinstance(x, Var):
        v = np.maximum(x.value, 0.0) + np.log1p(np.exp(-np.abs(x.value)))
        s = _sigmoid_np(x.value)
        out = Var(v, (x,))
        out._vjp = lambda g: x._accumulate(g * s)
        return out
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    if isinstance(x, Var):
        s = _sigmoid_np(x.value)
        out = Var(s, (x,))
        out._vjp = lambda g: x._accumulate(g * s * (1.0 - s))
        return out
    return _sigmoid_np(np.asarray(x, dtype=np.float64))


def tanh(x):
    if isinstance(x, Var):
        t = np.tanh(x.value)
        out = Var(t, (x,))
        out._vjp = lambda g: x._accumulate(g * (1.0 - t * t))
        return out
    return np.tanh(np.asarray(x, dtype=np.float64))


def absolute(x):
    if isinstance(x, Var):
        out = Var(np.abs(x.value), (x,))
        out._vjp = lambda g: x._accumulate(g * np.sign(x.value))
        return out
    return np.abs(x)


def maximum(x, c):
    """Elementwise max of x with a constant floor c."""
    if isinstance(x, Var):
        mask = x.value >= c
        out = Var(np.maximum(x.value, c), (x,))
        out._vjp = lambda g: x._accumulate(g * mask)
        return out
    return np.maximum(x, c)


def vmean(x):
    if isinstance(x, Var):
        n = x.value.size
        out = Var(np.mean(x.value), (x,))
        out._vjp = lambda g: x._accumulate(np.full(x.value.shape, g / n))
        return out
    return np.mean(x)


def vsum(x):
    if isinstance(x, Var):
        out = Var(np.sum(x.value), (x,))
        out._vjp = lambda g: x._accumulate(np.full(x.value.shape, g))
        return out
    return np.sum(x)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


_ACTIVATIONS = ("softplus", "tanh")


# ---------------------------------------------------------------------------
# network description and parameter storage


@dataclass(frozen=True)
class MlpSpec:
    """Feed-forward fully connected network architecture.

    input_dim is d+1 for space-time inputs (t, x_1..x_d).  The activation
    must be twice continuously differentiable; softplus is the default.
    """

    input_dim: int
    hidden_widths: tuple = (64, 64)
    activation: str = "softplus"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ContractError("input_dim must be >= 1")
        if len(self.hidden_widths) == 0 or any(w < 1 for w in self.hidden_widths):
            raise ContractError("hidden_widths must be non-empty with widths >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    def layer_dims(self):
        """List of (fan_in, fan_out) per layer, output layer included."""
        widths = [self.input_dim, *self.hidden_widths, 1]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self):
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


class ParamVector:
    """Flat float64 storage of all trainable parameters of one network.

    Layout: per layer, row-major W (fan_out, fan_in) followed by b (fan_out).
    """

    def __init__(self, spec: MlpSpec, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (spec.n_params,):
            raise ContractError(
                f"parameter vector length {data.shape} != expected ({spec.n_params},)"
            )
        self.spec = spec
        self.data = data

    @classmethod
    def zeros(cls, spec: MlpSpec):
        return cls(spec, np.zeros(spec.n_params))

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator):
        """Glorot-uniform weights, zero biases."""
        chunks = []
        for fi, fo in spec.layer_dims():
            bound = np.sqrt(6.0 / (fi + fo))
            chunks.append(rng.uniform(-bound, bound, size=fi * fo))
            chunks.append(np.zeros(fo))
        return cls(spec, np.concatenate(chunks))

    def layers(self):
        """Per-layer (W, b) views into the flat data."""
        out = []
        off = 0
        for fi, fo in self.spec.layer_dims():
            w = self.data[off : off + fi * fo].reshape(fo, fi)
            off += fi * fo
            b = self.data[off : off + fo]
            off += fo
            out.append((w, b.reshape(fo, 1)))
        return out

    def copy(self):
        return ParamVector(self.spec, self.data.copy())


class TracedParams:
    """ParamVector whose layers are tape variables; passed to loss closures
    so that a reverse sweep yields parameter gradients."""

    def __init__(self, params: ParamVector):
        self.spec = params.spec
        self._vars = [(Var(w), Var(b)) for w, b in params.layers()]

    def layers(self):
        return self._vars

    def gradient(self):
        """Flat gradient in ParamVector layout (after backward())."""
        chunks = []
        for wv, bv in self._vars:
            gw = wv.grad if wv.grad is not None else np.zeros(wv.value.shape)
            gb = bv.grad if bv.grad is not None else np.zeros(bv.value.shape)
            chunks.append(gw.ravel())
            chunks.append(gb.ravel())
        return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# jets


@dataclass
class Jet2:
    """Truncated order-2 Taylor expansion along one direction."""

    v: float
    d1: float
    d2: float

    def __add__(self, other):
        if isinstance(other, Jet2):
            return Jet2(self.v + other.v, self.d1 + other.d1, self.d2 + other.d2)
        return Jet2(self.v + other, self.d1, self.d2)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return Jet2(
                self.v * other.v,
                self.d1 * other.v + self.v * other.d1,
                self.d2 * other.v + 2.0 * self.d1 * other.d1 + self.v * other.d2,
            )
        return Jet2(self.v * other, self.d1 * other, self.d2 * other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    @classmethod
    def variable(cls, x):
        """Jet seed for the expansion variable itself."""
        return cls(float(x), 1.0, 0.0)


@dataclass
class SpaceTimeDerivs:
    """Value and space-time derivative bundle (u, du/dt, grad_x u, lap_x u)."""

    u: float
    ut: float
    grad: np.ndarray
    lap: float


def _act_fns(activation):
    if activation == "softplus":
        def g(z):
            return softplus(z)

        def g1(z):
            return sigmoid(z)

        def g2(z, s):
            # s = sigmoid(z), reused
            return s * (1.0 - s)

    else:  # tanh
        def g(z):
            return tanh(z)

        def g1(z):
            t = tanh(z)
            return 1.0 - t * t

        def g2(z, t1):
            # t1 = 1 - tanh^2; g'' = -2 tanh (1 - tanh^2)
            return -2.0 * tanh(z) * t1

    return g, g1, g2


def mlp_forward_batch(spec: MlpSpec, params, inputs):
    """Network output over a batch; inputs shape (input_dim, n) -> (n,)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] != spec.input_dim:
        raise ContractError(
            f"input dim {inputs.shape[0]} != spec.input_dim {spec.input_dim}"
        )
    g, _, _ = _act_fns(spec.activation)
    layers = params.layers()
    a = inputs
    for w, b in layers[:-1]:
        z = w @ a + b
        a = g(z)
    w, b = layers[-1]
    out = w @ a + b
    return _squeeze_row(out)


def _squeeze_row(x):
    if isinstance(x, Var):
        out = Var(x.value[0], (x,))
        out._vjp = lambda g: x._accumulate(g[None, :])
        return out
    return x[0]


def mlp_jet_batch(spec: MlpSpec, params, inputs, axis):
    """Order-2 jet of the network along one input axis, batched.

    Returns (v, d1, d2), each of shape (n,); Vars when params are traced.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] != spec.input_dim:
        raise ContractError(
            f"input dim {inputs.shape[0]} != spec.input_dim {spec.input_dim}"
        )
    if not 0 <= axis < spec.input_dim:
        raise ContractError(f"jet axis {axis} out of range for dim {spec.input_dim}")
    g, g1f, g2f = _act_fns(spec.activation)
    layers = params.layers()
    n = inputs.shape[1]
    v = inputs
    d1 = np.zeros_like(inputs)
    d1[axis] = 1.0
    d2 = np.zeros_like(inputs)
    for w, b in layers[:-1]:
        zv = w @ v + b
        zd1 = w @ d1
        zd2 = w @ d2
        s1 = g1f(zv)
        s2 = g2f(zv, s1)
        v = g(zv)
        d1 = s1 * zd1
        d2 = s2 * zd1**2 + s1 * zd2
    w, b = layers[-1]
    return (
        _squeeze_row(w @ v + b),
        _squeeze_row(w @ d1),
        _squeeze_row(w @ d2),
    )


def mlp_forward(spec: MlpSpec, params: ParamVector, inp):
    """Scalar network output at one input point."""
    inp = np.asarray(inp, dtype=np.float64).reshape(-1, 1)
    return float(mlp_forward_batch(spec, params, inp)[0])


def mlp_jet(spec: MlpSpec, params: ParamVector, inp, direction: int) -> Jet2:
    """(f, df/dx_k, d2f/dx_k2) of the network at one input point."""
    inp = np.asarray(inp, dtype=np.float64).reshape(-1, 1)
    v, d1, d2 = mlp_jet_batch(spec, params, inp, direction)
    return Jet2(float(v[0]), float(d1[0]), float(d2[0]))


def spacetime_derivs(spec: MlpSpec, params, t, x) -> SpaceTimeDerivs:
    """Derivative bundle of the raw network at one (t, x) point.

    Input layout is (t, x_1..x_d); one jet pass per axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != spec.input_dim - 1:
        raise ContractError(f"spatial dim {x.shape[0]} != {spec.input_dim - 1}")
    inp = np.concatenate([[t], x])
    jt = mlp_jet(spec, params, inp, 0)
    grad = np.empty(x.shape[0])
    lap = 0.0
    for k in range(x.shape[0]):
        jk = mlp_jet(spec, params, inp, k + 1)
        grad[k] = jk.d1
        lap += jk.d2
    return SpaceTimeDerivs(u=jt.v, ut=jt.d1, grad=grad, lap=lap)


def param_gradient(loss_eval, params: ParamVector):
    """Gradient of a scalar loss with respect to every parameter.

    loss_eval receives a traced parameter object (same .layers() interface
    as ParamVector) and must compose the loss from engine primitives only.
    """
    traced = TracedParams(params)
    loss = loss_eval(traced)
    if not isinstance(loss, Var):
        # loss independent of the parameters
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"loss evaluated to {loss!r}")
        return np.zeros(params.spec.n_params)
    if not np.isfinite(loss.value):
        raise NonFiniteLossError(f"loss evaluated to {loss.value!r}")
    loss.backward()
    return traced.gradient()


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"QPMECKPT"


def save_checkpoint(path, params: ParamVector, seed=0, step=0, meta=None):
    """Binary checkpoint: JSON header + little-endian float64 parameters.

    The write is atomic (temp file then rename); the float payload round
    trips bit-exactly.
    """
    header = {
        "input_dim": params.spec.input_dim,
        "hidden_widths": list(params.spec.hidden_widths),
        "activation": params.spec.activation,
        "seed": int(seed),
        "step": int(step),
        "n_params": int(params.spec.n_params),
    }
    if meta:
        header["meta"] = meta
    blob = json.dumps(header).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.data.astype("<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Load a checkpoint; returns (params, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ContractError(f"{path}: not a parameter checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    spec = MlpSpec(
        input_dim=header["input_dim"],
        hidden_widths=tuple(header["hidden_widths"]),
        activation=header["activation"],
    )
    if data.shape[0] != header["n_params"]:
        raise ContractError(f"{path}: truncated checkpoint payload")
    return ParamVector(spec, data), header
