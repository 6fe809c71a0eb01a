"""A small tape-based reverse-mode differentiation engine on float64 numpy arrays.

Usage::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ops.mean(ops.relu(ops.matmul(x, w)))
    grads = backward(tape, loss)        # {id(w) -> dL/dw}

Operations executed while a tape is active are recorded if any input is a
trainable leaf or was itself produced on the tape; outside a tape they just
compute values (that is how eval-mode forwards run).

Only the operations the decoding model needs are provided.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

ELU_ALPHA = 1.0
SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_ids = itertools.count()


class Tensor:
    """Contiguous row-major float64 array with an identity used by the tape."""

    __slots__ = ("data", "requires_grad", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64, order="C", copy=None)
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class OpRecord:
    kind: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    records: list[OpRecord] = field(default_factory=list)
    tracked: set[int] = field(default_factory=set)
    leaves: dict[int, Tensor] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def watches(self, t: Tensor) -> bool:
        return t.requires_grad or t.id in self.tracked


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def record(kind: str, inputs: Sequence[Tensor], out: np.ndarray,
           backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``out`` in a Tensor and, if a tape is watching an input, log the op.

    ``backward_fn`` maps the upstream gradient to one gradient per input
    (``None`` for inputs that need none). Custom fused ops use this directly.
    """
    result = Tensor(out)
    tape = active_tape()
    if tape is not None and any(tape.watches(t) for t in inputs):
        for t in inputs:
            if t.requires_grad:
                tape.leaves[t.id] = t
        tape.tracked.add(result.id)
        tape.records.append(OpRecord(kind, tuple(t.id for t in inputs), result.id, backward_fn))
    return result


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every trainable leaf seen on ``tape``."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None) if rec.output != loss.id else grads.get(rec.output)
        if g is None:
            continue
        for tid, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + gi
            else:
                grads[tid] = gi
    return {tid: grads.get(tid, np.zeros_like(t.data)) for tid, t in tape.leaves.items()}


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{kind}: cannot broadcast {a.shape} with {b.shape}",
                            left=list(a.shape), right=list(b.shape)) from None


# --------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}", left=list(a.shape), right=list(b.shape))
    A, B = a.data, b.data
    return record("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return record("mul", (a, b), A * B,
                  lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return record("scale", (a,), a.data * c, lambda g: (g * c,))


# --------------------------------------------------------------------------
# elementwise nonlinearities


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    d = np.where(x.data > 0, 1.0, slope)
    return record("leaky_relu", (x,), x.data * d, lambda g: (g * d,))


def elu(x: Tensor, alpha: float = ELU_ALPHA) -> Tensor:
    pos = x.data > 0
    e = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, e)
    d = np.where(pos, 1.0, e + alpha)
    return record("elu", (x,), out, lambda g: (g * d,))


def selu(x: Tensor) -> Tensor:
    pos = x.data > 0
    e = SELU_ALPHA * np.expm1(np.minimum(x.data, 0.0))
    out = SELU_SCALE * np.where(pos, x.data, e)
    d = SELU_SCALE * np.where(pos, 1.0, e + SELU_ALPHA)
    return record("selu", (x,), out, lambda g: (g * d,))


def sigmoid(x: Tensor) -> Tensor:
    # 0.5 * (1 + tanh(x / 2)) is overflow-free on both tails
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return record("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "elu": elu,
    "selu": selu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "linear": identity,
}


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", (x,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


# --------------------------------------------------------------------------
# structure


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in xs]}") from None
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return record("concat", xs, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing, e.g. ``slice_(x, (slice(None), 3))``."""
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        gx[key] = g
        return (gx,)

    return record("slice", (x,), x.data[key].copy(), back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: {old} -> {shape}") from None
    return record("reshape", (x,), out, lambda g: (g.reshape(old),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    n = x.data.size if axis is None else shape[axis]

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / n,)

    return record("mean", (x,), np.asarray(x.data.mean(axis=axis)), back)


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (x,), np.asarray(x.data.sum(axis=axis)), back)


# --------------------------------------------------------------------------
# regularization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, momentum: float = BN_MOMENTUM,
               eps: float = BN_EPS) -> Tensor:
    """Normalize ``(B, F)`` features over the batch.

    Train mode uses biased batch statistics and updates ``running_mean`` /
    ``running_var`` in place (``r <- momentum * r + (1 - momentum) * batch``);
    eval mode uses the running statistics.
    """
    X = x.data
    if X.ndim != 2 or gamma.shape != (X.shape[1],) or beta.shape != (X.shape[1],):
        raise ShapeMismatch(f"batch_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    G = gamma.data
    if not train:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (X - running_mean) * inv
        return record("batch_norm", (x, gamma, beta), xhat * G + beta.data,
                      lambda g: (g * G * inv, (g * xhat).sum(axis=0), g.sum(axis=0)))
    B = X.shape[0]
    mu = X.mean(axis=0)
    var = X.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (X - mu) * inv
    running_mean *= momentum
    running_mean += (1 - momentum) * mu
    running_var *= momentum
    running_var += (1 - momentum) * var

    def back(g):
        dxhat = g * G
        dx = inv / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return record("batch_norm", (x, gamma, beta), xhat * G + beta.data, back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate); identity in eval mode."""
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return record("dropout", (x,), x.data * mask, lambda g: (g * mask,))


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"adam: grad {g.shape} vs param {name} {p.shape}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------
# verification


def gradient(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    """Analytic gradient of the scalar returned by ``f()`` w.r.t. ``params``."""
    with Tape() as tape:
        out = f()
    g = backward(tape, out)
    return [g.get(p.id, np.zeros_like(p.data)) for p in params]


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                      analytic: Sequence[np.ndarray] | None = None,
                      coords: Sequence[tuple[int, int]] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and reads the current values of ``params``;
    perturbations are applied in place and undone. ``coords`` restricts the
    check to ``(param_index, flat_index)`` pairs. Relative error per
    coordinate is ``|a - c| / (|a| + |c| + 1e-12)``.
    """
    if analytic is None:
        analytic = gradient(f, params)
    if coords is None:
        coords = [(k, i) for k, p in enumerate(params) for i in range(p.size)]
    worst = 0.0
    for k, i in coords:
        flat = params[k].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        c = (fp - fm) / (2 * h)
        a = float(np.asarray(analytic[k]).reshape(-1)[i])
        worst = max(worst, abs(a - c) / (abs(a) + abs(c) + 1e-12))
    return worst
