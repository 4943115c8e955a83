"""Small eager tensor engine with reverse-mode differentiation.

Every op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` replays those closures in reverse creation
order, which is a valid reverse topological order of the recorded graph.
All arithmetic is float64.
"""
from __future__ import annotations

import itertools
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        nodes, stack, seen = [], [self], {id(self)}
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self._accum(np.asarray(grad, dtype=np.float64))
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
                # interior buffers are dead once propagated; leaves keep theirs
                t.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: x._accum(g * mask))


def sigmoid(x: Tensor) -> Tensor:
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    return _make(s, (x,), lambda g: x._accum(g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: x._accum(g * (1.0 - t * t)))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: x._accum(g * e))


def dropout(x: Tensor, rate: float, seed: int | None, training: bool = True) -> Tensor:
    """Inverted dropout; the keep-mask is a pure function of ``seed``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return _make(x.data * scale, (x,), lambda g: x._accum(g * scale))


# -- shape ops ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: x._accum(g.reshape(x.shape)))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: x._accum(g.transpose(inv)))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    data = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accum(piece)

    return _make(data, xs, backward)


def take(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing, ``x[key]``."""

    def backward(g):
        full = np.zeros_like(x.data)
        full[key] = g
        x._accum(full)

    return _make(x.data[key], (x,), backward)


def row_gather(x: Tensor, index) -> Tensor:
    """``x[index]`` along the first axis; ``index`` may have any shape."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < -x.shape[0] or index.max() >= x.shape[0]):
        raise IndexError("row_gather index out of range")

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accum(full)

    return _make(x.data[index], (x,), backward)


# -- reductions & linear algebra ---------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or batched (leading axes broadcast as in ``np.matmul``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _make(data, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / count)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    if x.shape[-1] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accum(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (x,), backward)


softmax_lastdim = softmax


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        x._accum(inv * (g - gm - y * gym))

    return _make(y, (x,), backward)


def cross_entropy_masked(logits: Tensor, labels, ids) -> Tensor:
    """Mean negative log-likelihood of ``labels[ids]`` under ``softmax(logits[ids])``."""
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cross_entropy_masked: empty mask")
    y = labels[ids]
    if y.min() < 0 or y.max() >= logits.shape[-1]:
        raise ValueError("cross_entropy_masked: label out of range")
    z = logits.data[ids]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(ids.size), y].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(ids.size), y] -= 1.0
        full = np.zeros_like(logits.data)
        np.add.at(full, ids, p * (g / ids.size))
        logits._accum(full)

    return _make(np.asarray(loss), (logits,), backward)


_GATHER_BLOCK = 8192  # gathered rows per block


def weighted_gather(values: Tensor, index, weights: Tensor) -> Tensor:
    """``out[..., :] = sum_w weights[..., w] * values[index[..., w], :]``.

    A sparse row-combination: only the indexed rows of ``values`` are read.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.shape != weights.shape:
        raise ValueError(f"weighted_gather: index {index.shape} vs weights {weights.shape}")
    # stream over the window axis in leading-axis blocks so temporaries stay
    # cache-resident; no (..., W, d) block is ever materialised
    width = index.shape[-1]
    data = np.zeros(index.shape[:-1] + values.shape[1:])
    step = max(1, _GATHER_BLOCK // max(1, int(np.prod(index.shape[1:]))))
    for lo in range(0, index.shape[0] if index.ndim > 1 else 1, step):
        blk = slice(lo, lo + step) if index.ndim > 1 else slice(None)
        idx, wts, acc = index[blk], weights.data[blk], data[blk]
        for w in range(width):
            acc += wts[..., w, None] * values.data[idx[..., w]]

    def backward(g):
        if weights.requires_grad:
            gw = np.empty_like(weights.data)
            for w in range(width):
                gw[..., w] = (g * values.data[index[..., w]]).sum(axis=-1)
            weights._accum(gw)
        if values.requires_grad:
            d = values.shape[-1]
            full = np.zeros_like(values.data)
            flat_g = g.reshape(-1, d)
            for w in range(width):
                contrib = weights.data[..., w].reshape(-1, 1) * flat_g
                # bincount per column is much faster than np.add.at
                idx = index[..., w].reshape(-1)
                for col in range(d):
                    full[:, col] += np.bincount(idx, weights=contrib[:, col], minlength=values.shape[0])
            values._accum(full)

    return _make(data, (values, weights), backward)


# -- optimisation -------------------------------------------------------------


class NonFiniteGradient(FloatingPointError):
    pass


class Adam:
    """Adam with decoupled weight decay (parameters shrink before each step)."""

    def __init__(self, params: dict, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        adam_step(self.params, grads, self, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One Adam update in place. ``state`` needs ``t``, ``m`` and ``v`` attributes."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"DGTCKP1"


def save_params(params: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        for name in sorted(params):
            arr = np.asarray(params[name].data, dtype="<f8", order="C")
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:7] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    off, out = 7, {}
    while off < len(raw):
        (klen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + klen].decode("utf-8")
        off += klen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    return out
