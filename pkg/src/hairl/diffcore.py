"""Reverse-mode differentiation over float64 numpy arrays.

Only the operations the policy, posterior and discriminator networks need are
provided. Every op records a closure mapping the output gradient to its parents'
gradients; ``Tensor.backward`` walks the graph in reverse topological order and
accumulates into leaf tensors (parameters).
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = grads[k] + gp if k in grads else gp

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node(out, (a,), lambda g: (g * _sigmoid(x),))


def logaddexp(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.logaddexp(a.data, b.data)
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * np.exp(a.data - out), a.shape),
                            _unbroadcast(g * np.exp(b.data - out), b.shape)))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    return _node(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(take_a, g, 0.0), a.shape),
                            _unbroadcast(np.where(take_a, 0.0, g), b.shape)))


# reductions and shape -------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    return _node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.data.size / max(out.size, 1)
    return _node(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / n,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), back)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), back)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _node(np.stack([x.data for x in xs], axis=axis), tuple(xs), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), back)


# probability heads ----------------------------------------------------------

def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m)
    tot = s.sum(axis=axis, keepdims=True)
    out_k = m + np.log(tot)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * s / tot,)

    return _node(out, (a,), back)


def _softmax_np(x: np.ndarray, axis=-1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    m = a.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    out = a.data - lse
    p = np.exp(out)
    return _node(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1) -> Tensor:
    """Normalized exponentials; invariant to adding a constant to the logits."""
    a = as_tensor(a)
    if a.size == 0 or a.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    s = _softmax_np(a.data, axis)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def pick(a, idx) -> Tensor:
    """Select ``a[i, idx[i]]`` along the last axis."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def back(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return _node(a.data[rows, idx], (a,), back)


def categorical_entropy(logits) -> Tensor:
    lp = log_softmax(logits)
    return -tsum(exp(lp) * lp, axis=-1)


# layers ---------------------------------------------------------------------

def linear(x, W, b) -> Tensor:
    """``y = x W + b``; accepts a single vector or a batch of row vectors."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.shape != (W.shape[1],):
        raise DimensionError(f"bad linear parameter shapes W{W.shape} b{b.shape}")
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear input width {x.shape[-1]} != {W.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    out = (x2 @ W.data + b.data).reshape(lead + (W.shape[1],))

    def back(g):
        g2 = g.reshape(-1, W.shape[1])
        return ((g2 @ W.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0))

    return _node(out, (x, W, b), back)


def gru_cell(x, h, Wx, U_ru, U_c, b) -> Tensor:
    """Gated recurrent update.

    Gates ``r, u = sigmoid(x Wx[:, :2H] + h U_ru + b[:2H])``, candidate
    ``c = tanh(x Wx[:, 2H:] + (r*h) U_c + b[2H:])`` and ``h' = (1-u) h + u c``.
    """
    x, h, Wx, U_ru, U_c, b = map(as_tensor, (x, h, Wx, U_ru, U_c, b))
    H = h.shape[-1]
    if Wx.shape != (x.shape[-1], 3 * H) or U_ru.shape != (H, 2 * H) \
            or U_c.shape != (H, H) or b.shape != (3 * H,) or x.shape[:-1] != h.shape[:-1]:
        raise DimensionError("gru_cell shape mismatch")
    xd, hd = np.atleast_2d(x.data), np.atleast_2d(h.data)
    a = xd @ Wx.data + b.data
    hr = hd @ U_ru.data
    r = _sigmoid(a[:, :H] + hr[:, :H])
    u = _sigmoid(a[:, H:2 * H] + hr[:, H:])
    rh = r * hd
    c = np.tanh(a[:, 2 * H:] + rh @ U_c.data)
    out = (1.0 - u) * hd + u * c

    def back(g):
        g = np.atleast_2d(g)
        du = g * (c - hd)
        dpre_c = g * u * (1.0 - c * c)
        drh = dpre_c @ U_c.data.T
        dpre_r = drh * hd * r * (1.0 - r)
        dpre_u = du * u * (1.0 - u)
        dpre_ru = np.concatenate([dpre_r, dpre_u], axis=1)
        dA = np.concatenate([dpre_r, dpre_u, dpre_c], axis=1)
        dh = g * (1.0 - u) + drh * r + dpre_ru @ U_ru.data.T
        dx = dA @ Wx.data.T
        return (dx.reshape(x.shape), dh.reshape(h.shape), xd.T @ dA,
                hd.T @ dpre_ru, rh.T @ dpre_c, dA.sum(axis=0))

    return _node(out.reshape(h.shape), (x, h, Wx, U_ru, U_c, b), back)


# parameters -----------------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0) -> np.ndarray:
    bound = scale * math.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named parameter tensors with stable insertion order."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = dict(params or {})

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def subset(self, keep: Callable[[str], bool]) -> "ParamStore":
        return ParamStore({k: v for k, v in self._params.items() if keep(k)})

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        missing = [k for k in self._params if k not in state]
        if strict and missing:
            raise KeyError(f"missing parameters: {missing}")
        for k, t in self._params.items():
            if k not in state:
                continue
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != t.data.shape:
                raise DimensionError(f"parameter {k}: shape {v.shape} != {t.data.shape}")
            t.data = v.copy()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


def save_params(path, stores: dict[str, ParamStore], meta: str = "") -> None:
    """Write ``prefix/name -> array`` records plus a metadata string to ``.npz``."""
    arrays = {}
    for prefix, store in stores.items():
        for name, t in store.items():
            arrays[f"{prefix}/{name}"] = t.data
    arrays["__meta__"] = np.array(meta)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> tuple[dict[str, dict[str, np.ndarray]], str]:
    out: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path, allow_pickle=False) as z:
        meta = str(z["__meta__"]) if "__meta__" in z.files else ""
        for key in z.files:
            if key == "__meta__":
                continue
            prefix, name = key.split("/", 1)
            out.setdefault(prefix, {})[name] = z[key].copy()
    return out, meta


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, max_grad_norm: float | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient")
        if self.max_grad_norm is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.max_grad_norm:
                s = self.max_grad_norm / (norm + 1e-12)
                grads = {k: g * s for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class MLP:
    """Tanh multilayer perceptron whose weights live in a shared store."""

    def __init__(self, store: ParamStore, prefix: str, sizes: Sequence[int],
                 rng: np.random.Generator, init_scale: float = 1.0):
        self.prefix = prefix
        self.n_layers = len(sizes) - 1
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            store.add(f"{prefix}.l{i}.W", uniform_init(rng, (fi, fo), fi, init_scale))
            store.add(f"{prefix}.l{i}.b", uniform_init(rng, (fo,), fi, init_scale))
        self.store = store

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i in range(self.n_layers):
            h = linear(h, self.store[f"{self.prefix}.l{i}.W"], self.store[f"{self.prefix}.l{i}.b"])
            if i < self.n_layers - 1:
                h = tanh(h)
        return h


def grad_check(loss_fn: Callable[[], Tensor], params: ParamStore, epsilon: float = 1e-5,
               max_per_param: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest ``|analytic - central FD| / max(1, |FD|)`` over the checked entries.

    ``max_per_param`` limits the number of coordinates probed in each tensor;
    the probed coordinates are drawn from ``rng``.
    """
    params.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss")
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for k, p in params.items():
        flat_n = p.data.size
        coords: Iterable[int] = range(flat_n)
        if max_per_param is not None and flat_n > max_per_param:
            coords = rng.choice(flat_n, size=max_per_param, replace=False)
        for i in coords:
            idx = np.unravel_index(int(i), p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + epsilon
            with no_grad():
                lp = loss_fn().item()
            p.data[idx] = orig - epsilon
            with no_grad():
                lm = loss_fn().item()
            p.data[idx] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError("non-finite loss during finite differences")
            fd = (lp - lm) / (2.0 * epsilon)
            err = abs(analytic[k][idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    params.zero_grad()
    return worst
