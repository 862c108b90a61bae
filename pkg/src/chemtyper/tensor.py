"""Dense float64 tensors with a dynamic reverse-mode gradient tape.

Every differentiable op records its parents and a closure mapping the
output gradient to one gradient per parent.  ``backward`` walks the tape
in reverse topological order; leaf tensors accumulate into ``.grad``.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from chemtyper.errors import ContractError


class ShapeError(ContractError, ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray (op) Tensor dispatch to the Tensor side

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def _scalar_error(t: Tensor):
    raise ContractError(f"item() needs a one-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed as -softplus(-x) without overflow."""
    x = a.data
    y = -(np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    return _make(y, (a,), lambda g: (g * _sigmoid(-x),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D and 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
        b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        return (g2 @ b2.T).reshape(ad.shape), (a2.T @ g2).reshape(bd.shape)

    return _make(ad @ bd, (a, b), fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {shape}") from None
    return _make(y, (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- structure


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ndim = tensors[0].ndim
    if any(t.ndim != ndim for t in tensors):
        raise ShapeError(f"concat: rank mismatch {[t.shape for t in tensors]}")
    ax = axis % ndim
    for t in tensors[1:]:
        for i in range(ndim):
            if i != ax and t.shape[i] != tensors[0].shape[i]:
                raise ShapeError(f"concat along axis {axis}: shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        out = []
        for i in range(len(sizes)):
            sl = [slice(None)] * ndim
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), fn)


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=0)


def index(a: Tensor, key) -> Tensor:
    shape = a.shape
    try:
        y = a.data[key]
    except IndexError as exc:
        raise IndexError(f"index {key!r} out of range for shape {shape}") from exc

    def fn(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(y, dtype=np.float64), (a,), fn)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; ids outside the vocabulary raise IndexError."""
    ids = np.asarray(ids, dtype=np.int64)
    n = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"embedding index {int(bad)} outside vocabulary of size {n}")
    return index(weight, ids)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` as one tape node."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: {x.shape} @ {w.shape} + {b.shape}")
    xd, wd = x.data, w.data

    def fn(g):
        x2 = xd.reshape(-1, xd.shape[-1])
        g2 = g.reshape(-1, wd.shape[1])
        return (g2 @ wd.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0)

    return _make(xd @ wd + b.data, (x, w, b), fn)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention over rows.

    ``q``, ``k``, ``v`` are (n, d); each head sees a contiguous d/heads
    column block.  Output is (n, d) with heads concatenated.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 2:
        raise ShapeError(f"attention needs equal 2-D q/k/v, got {q.shape}, {k.shape}, {v.shape}")
    n, d = q.shape
    if d % heads:
        raise ShapeError(f"width {d} is not divisible by {heads} heads")
    dh = d // heads
    c = 1.0 / math.sqrt(dh)

    def split(a):
        return a.reshape(n, heads, dh).transpose(1, 0, 2)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.transpose(0, 2, 1)) * c
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    out = (p @ vh).transpose(1, 0, 2).reshape(n, d)

    def fn(g):
        gh = split(g)
        dv = p.transpose(0, 2, 1) @ gh
        dp = gh @ vh.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * c
        dq = ds @ kh
        dk = ds.transpose(0, 2, 1) @ qh

        def merge(a):
            return a.transpose(1, 0, 2).reshape(n, d)

        return merge(dq), merge(dk), merge(dv)

    return _make(out, (q, k, v), fn)


# ---------------------------------------------------------------- reductions


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _make(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % a.ndim

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _make(a.data.sum(axis=ax), (a,), fn)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over an empty axis of shape {a.shape}")
    return scale(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------- normalization


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def fn(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return _make(xhat * gd + beta.data, (x, gamma, beta), fn)


# ---------------------------------------------------------------- tape


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``.

    Leaf gradients are summed into any existing ``.grad``; call
    ``zero_grad`` between steps to reset them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Named trainable tensors plus Adam state.

    ``step`` applies Adam (or plain SGD) and zeroes gradients afterwards.
    """

    def __init__(self, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        t = Tensor(data, requires_grad=True)
        t.zero_grad()
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def num_values(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self, lr: float = 1e-3, optimizer: str = "adam") -> None:
        missing = [n for n, t in self.params.items() if t.grad is None]
        if missing:
            raise ContractError(f"no gradient for parameter(s): {', '.join(missing)}")
        if optimizer == "sgd":
            for t in self.params.values():
                t.data -= lr * t.grad
        elif optimizer == "adam":
            b1, b2 = self.betas
            self.step_count += 1
            c1 = 1.0 - b1**self.step_count
            c2 = 1.0 - b2**self.step_count
            for name, t in self.params.items():
                g = t.grad
                m = self.m[name]
                v = self.v[name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        else:
            raise ContractError(f"unknown optimizer {optimizer!r}")
        self.zero_grad()

    # checkpoints -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in self.params.items()
        }

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        if strict:
            extra = set(state) - set(self.params)
            missing = set(self.params) - set(state)
            if extra or missing:
                raise ContractError(
                    f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
                )
        for name, entry in state.items():
            if name not in self.params:
                continue
            t = self.params[name]
            shape = tuple(entry["shape"])
            if shape != t.shape:
                raise ShapeError(f"checkpoint shape {shape} for {name!r}, model has {t.shape}")
            t.data[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)


def save_checkpoint(path: str | Path, store: ParamStore, config: dict) -> None:
    payload = {"config": config, "params": store.state_dict()}
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Return ``(config, params)`` from a checkpoint file."""
    payload = json.loads(Path(path).read_text())
    return payload["config"], payload["params"]


# ---------------------------------------------------------------- gradient checking


def numerical_grad(fn: Callable[[], float], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``t.data``."""
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = fn()
        flat[i] = old - step
        lo = fn()
        flat[i] = old
        gflat[i] = (hi - lo) / (2.0 * step)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, abs_floor: float = 1e-6) -> float:
    """Largest elementwise relative error, ignoring entries within ``abs_floor``."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.where(denom == 0, 1.0, denom))
    return float(rel.max()) if rel.size else 0.0


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Iterable[tuple[str, Tensor]],
    step: float = 1e-5,
    abs_floor: float = 1e-6,
) -> dict[str, float]:
    """Compare tape gradients of ``loss_fn`` against central differences.

    Returns the max relative error per parameter name.
    """
    params = list(params)
    for _, t in params:
        t.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {name: t.grad.copy() for name, t in params}

    def value() -> float:
        return float(loss_fn().data)

    errors = {}
    for name, t in params:
        errors[name] = max_relative_error(analytic[name], numerical_grad(value, t, step), abs_floor)
    return errors


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    rates = 1.0 / np.power(10000.0, (2 * (i // 2)) / d)
    angles = pos * rates
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
