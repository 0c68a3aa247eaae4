"""Reverse-mode automatic differentiation over numpy float64 arrays, an
AdamW optimizer with decoupled weight decay, and a checkpoint format.

The graph is built eagerly: every operation returns a Tensor holding its
value and a closure that propagates the output gradient to its parents.
Inside a `no_grad()` block operations still compute values but record no
graph, which keeps sampling and evaluation cheap.
"""
from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "name", "grad")

    def __init__(self, value, parents=(), backward_fn=None, name="tensor"):
        self.value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise FloatingPointError(f"non-finite value in node {name!r}")
        self.parents = parents if _grad_enabled else ()
        self.backward_fn = backward_fn if _grad_enabled else None
        self.name = name
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out_val = self.value + other.value
        sa, sb = self.value.shape, other.value.shape

        def bwd(g):
            return (_unbroadcast(g, sa), _unbroadcast(g, sb))

        return Tensor(out_val, (self, other), bwd, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        sa, sb = self.value.shape, other.value.shape
        av, bv = self.value, other.value

        def bwd(g):
            return (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb))

        return Tensor(av * bv, (self, other), bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * _wrap(other) ** -1.0

    def __rtruediv__(self, other):
        return _wrap(other) * self**-1.0

    def __pow__(self, exponent: float):
        av = self.value

        def bwd(g):
            return (g * exponent * av ** (exponent - 1.0),)

        return Tensor(av**exponent, (self,), bwd, "pow")

    def __matmul__(self, other):
        other = _wrap(other)
        av, bv = self.value, other.value

        def bwd(g):
            ga = g @ np.swapaxes(bv, -1, -2)
            gb = np.swapaxes(av, -1, -2) @ g
            return (
                _unbroadcast(ga, av.shape),
                _unbroadcast(gb, bv.shape),
            )

        return Tensor(av @ bv, (self, other), bwd, "matmul")

    # -- elementwise functions ---------------------------------------------

    def exp(self):
        out_val = np.exp(self.value)
        return Tensor(out_val, (self,), lambda g: (g * out_val,), "exp")

    def log(self):
        av = self.value
        with np.errstate(divide="ignore", invalid="ignore"):
            out_val = np.log(av)
        return Tensor(out_val, (self,), lambda g: (g / av,), "log")

    def tanh(self):
        out_val = np.tanh(self.value)
        return Tensor(out_val, (self,), lambda g: (g * (1 - out_val**2),), "tanh")

    def relu(self):
        mask = self.value > 0

        def bwd(g):
            return (g * mask,)

        return Tensor(self.value * mask, (self,), bwd, "relu")

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape):
        old = self.value.shape
        return Tensor(
            self.value.reshape(*shape),
            (self,),
            lambda g: (g.reshape(old),),
            "reshape",
        )

    def swapaxes(self, a, b):
        return Tensor(
            np.swapaxes(self.value, a, b),
            (self,),
            lambda g: (np.swapaxes(g, a, b),),
            "swapaxes",
        )

    def sum(self, axis=None, keepdims=False):
        shape = self.value.shape

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, shape).copy(),)

        return Tensor(
            self.value.sum(axis=axis, keepdims=keepdims), (self,), bwd, "sum"
        )

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.value.size
        else:
            n = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def gather(self, indices):
        """Row lookup along the first axis (embedding table indexing)."""
        idx = np.asarray(indices, dtype=np.int64)
        shape = self.value.shape

        def bwd(g):
            out = np.zeros(shape)
            np.add.at(out, idx.reshape(-1), g.reshape(-1, shape[-1]))
            return (out,)

        return Tensor(self.value[idx], (self,), bwd, "gather")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, name="const")


def constant(x, name="const") -> Tensor:
    return Tensor(x, name=name)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    values = [t.value for t in tensors]
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate(values, axis=axis), tuple(tensors), bwd, "concat")


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor(
        np.stack([t.value for t in tensors], axis=axis), tuple(tensors), bwd, "stack"
    )


def logsumexp(t: Tensor, axis=-1, keepdims=False) -> Tensor:
    # subtracting the (constant) max keeps exp in range; gradient is exact
    m = np.max(t.value, axis=axis, keepdims=True)
    shifted = t - constant(m, "lse-shift")
    out = (shifted.exp().sum(axis=axis, keepdims=True)).log() + constant(m)
    if not keepdims:
        out = out.reshape(*np.squeeze(out.value, axis=axis).shape)
    return out


def log_softmax(t: Tensor, axis=-1) -> Tensor:
    return t - logsumexp(t, axis=axis, keepdims=True)


def softmax(t: Tensor, axis=-1) -> Tensor:
    return log_softmax(t, axis=axis).exp()


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = t.mean(axis=-1, keepdims=True)
    centered = t - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gain + bias


# ---------------------------------------------------------------------------
# parameters and gradients


class ParamStore:
    """Named float64 parameter arrays with a frozen shape registry."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._tensors: dict[str, Tensor] = {}
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite parameter {name!r}")
            self._tensors[name] = Tensor(arr, name=name)
        self._shapes = {n: t.value.shape for n, t in self._tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        # fresh leaf node each access so stale graphs are never retained
        t = self._tensors[name]
        if t.parents or t.backward_fn:
            raise AssertionError("parameter tensor must stay a leaf")
        return t

    def __contains__(self, name):
        return name in self._tensors

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._shapes)

    def get_array(self, name: str) -> np.ndarray:
        return self._tensors[name].value

    def set_array(self, name: str, arr: np.ndarray) -> None:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != self._shapes[name]:
            raise ValueError(
                f"shape mismatch for {name}: {arr.shape} != {self._shapes[name]}"
            )
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite parameter {name!r}")
        self._tensors[name] = Tensor(arr, name=name)

    def copy(self) -> "ParamStore":
        return ParamStore({n: t.value.copy() for n, t in self._tensors.items()})

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self._tensors.items()}


def grad(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of a scalar loss for every parameter."""
    if loss.value.shape != ():
        raise ValueError("loss must be a scalar node")
    topo: list[Tensor] = []
    seen: set[int] = set()
    # iterative post-order to avoid recursion limits on long sequences
    visiting: list[tuple[Tensor, bool]] = [(loss, False)]
    while visiting:
        node, done = visiting.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        visiting.append((node, True))
        for p in node.parents:
            visiting.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node.backward_fn is None:
            node.grad = g
            continue
        node.grad = g
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at node {node.name!r}")
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    out = {}
    for name in params.names():
        t = params[name]
        out[name] = t.grad if t.grad is not None else np.zeros(t.value.shape)
        t.grad = None
    return out


def clip_global_norm(
    grads: dict[str, np.ndarray], max_norm: float = 5.0
) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {n: g * scale for n, g in grads.items()}


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def step(params: ParamStore, grads: dict[str, np.ndarray], opt: OptimState) -> None:
    """One AdamW update in place; weight decay is decoupled from the moments."""
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for name in params.names():
        g = grads.get(name)
        if g is None:
            continue
        theta = params.get_array(name)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        opt.m[name] = m
        opt.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        theta = theta - opt.lr * update - opt.lr * opt.weight_decay * theta
        params.set_array(name, theta)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParamStore, opt: OptimState | None = None, meta=None):
    arrays = {f"param/{n}": a for n, a in params.to_arrays().items()}
    header = {
        "version": CHECKPOINT_VERSION,
        "param_names": params.names(),
        "meta": meta or {},
        "optimizer": None,
    }
    if opt is not None:
        header["optimizer"] = {
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "weight_decay": opt.weight_decay,
            "step_count": opt.step_count,
        }
        for n, a in opt.m.items():
            arrays[f"m/{n}"] = a
        for n, a in opt.v.items():
            arrays[f"v/{n}"] = a
    arrays["__header__"] = np.frombuffer(
        json.dumps(header).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (params, optimizer state or None, meta dict)."""
    data = np.load(path)
    header = json.loads(bytes(data["__header__"]).decode("utf-8"))
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    params = ParamStore(
        {n: data[f"param/{n}"] for n in header["param_names"]}
    )
    opt = None
    if header["optimizer"] is not None:
        h = header["optimizer"]
        opt = OptimState(
            lr=h["lr"],
            beta1=h["beta1"],
            beta2=h["beta2"],
            eps=h["eps"],
            weight_decay=h["weight_decay"],
            step_count=h["step_count"],
        )
        for key in data.files:
            if key.startswith("m/"):
                opt.m[key[2:]] = data[key]
            elif key.startswith("v/"):
                opt.v[key[2:]] = data[key]
    return params, opt, header["meta"]
