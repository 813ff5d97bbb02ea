"""Dense tensors with reverse-mode automatic differentiation.

Buffers are numpy arrays; every differentiable op records a closure that maps
the upstream gradient to gradients for its parents. ``Tensor.backward`` walks
the recorded graph in reverse topological order.

Precision is carried by the data buffer: float32 by default, float64 for
gradient verification. Ops never change precision.
"""
from __future__ import annotations

import contextlib
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None and not (isinstance(data, np.ndarray) and data.dtype.kind == "f"):
            dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _record(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _record(out, (a, b), bw, "div")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,), "log")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        if not b.requires_grad:
            gb = None
        elif bd.ndim == 2:
            # fold the batch dims of ``a`` into one GEMM instead of a batched product plus a sum
            gb = ad.reshape(-1, ad.shape[-1]).T @ np.broadcast_to(g, ad.shape[:-1] + (bd.shape[1],)).reshape(
                -1, bd.shape[1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return _record(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------- reductions & normalisation


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _record(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bw, "mean")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise along ``axis`` to zero mean / unit variance, then apply the affine."""
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = xd.shape[axis]
    out = xhat
    if gamma is not None:
        if gamma.shape[-1] != n or axis not in (-1, xd.ndim - 1):
            raise ShapeError(f"layer_norm: incompatible shapes {x.shape} and {gamma.shape}")
        out = xhat * gamma.data + beta.data
    parents = (x,) if gamma is None else (x, gamma, beta)

    def bw(g):
        gx_hat = g if gamma is None else g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=axis, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=axis, keepdims=True))
        if gamma is None:
            return (gx,)
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, parents, bw, "layer_norm")


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean token-level negative log-likelihood over unmasked positions.

    ``logits`` has shape (..., V); ``targets`` holds integer ids with the leading shape.
    """
    ld = logits.data
    z = ld - ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    tgt = np.asarray(targets)
    w = np.ones(tgt.shape, dtype=ld.dtype) if mask is None else np.asarray(mask, dtype=ld.dtype)
    denom = max(float(w.sum()), 1.0)
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum() / denom

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, tgt[..., None], 1.0, axis=-1)
        return (g * (p - onehot) * (w / denom)[..., None],)

    return _record(np.asarray(loss, dtype=ld.dtype), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------- shape & indexing


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: incompatible shapes {old} and {tuple(shape)}") from None
    return _record(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: incompatible shapes {old} and {shape}") from None
    return _record(out, (x,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _record(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embed: incompatible shapes {table.shape} and {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embed: id out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _record(table.data[ids], (table,), bw, "embed")


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``x`` along ``axis`` (rows by default)."""
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim
    if idx.size and (idx.min() < -x.shape[ax] or idx.max() >= x.shape[ax]):
        raise IndexError(f"take: index out of range for axis of size {x.shape[ax]}")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (slice(None),) * ax + (idx,), g)
        return (out,)

    return _record(np.take(x.data, idx, axis=ax), (x,), bw, "take")


def slice_rows(x: Tensor, indices) -> Tensor:
    return take(x, indices, axis=0)


def scatter_add(dest: Tensor, indices, src: Tensor, axis: int = 0) -> Tensor:
    """Return a copy of ``dest`` with ``src`` slices added at ``indices`` along ``axis``.

    Repeated indices accumulate. Slices not named in ``indices`` are copied bit-for-bit.
    """
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % dest.ndim
    expect = dest.shape[:ax] + idx.shape + dest.shape[ax + 1:]
    if src.shape != expect:
        raise ShapeError(f"scatter_add: incompatible shapes {dest.shape} and {src.shape}")
    out = dest.data.copy()
    sel = (slice(None),) * ax + (idx,)
    np.add.at(out, sel, src.data)
    return _record(out, (dest, src), lambda g: (g, np.take(g, idx, axis=ax)), "scatter_add")


def where_const(mask: np.ndarray, x: Tensor, fill: float) -> Tensor:
    """Replace entries where ``mask`` is true with a constant."""
    m = np.broadcast_to(mask, x.shape)
    out = np.where(m, np.asarray(fill, dtype=x.dtype), x.data)
    return _record(out, (x,), lambda g: (np.where(m, 0.0, g).astype(g.dtype),), "where_const")


# ---------------------------------------------------------------- autodiff driver


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf that requires grad."""
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- randomness & init


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream seeded with a 64-bit integer; identical across platforms."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def normal_init(rng: np.random.Generator, shape, std: float = 0.02, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------- checkpoints

_MAGIC = "KGRCKPT 1"


def save_checkpoint(path, named: Iterable[tuple[str, np.ndarray | Tensor]]) -> None:
    """Write a text header of (name, dtype, shape, offset, nbytes) lines followed by raw little-endian buffers."""
    entries, blobs, offset = [], [], 0
    for name, arr in named:
        a = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name contains whitespace: {name!r}")
        a = np.asarray(a, dtype=a.dtype.newbyteorder("<"), order="C")
        raw = a.tobytes()
        shape = ",".join(str(s) for s in a.shape) or "-"
        entries.append(f"{name} {a.dtype.str} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    header = "\n".join([_MAGIC, str(len(entries)), *entries, "END"]) + "\n"
    head = header.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", fh.read(8))
        lines = fh.read(hlen).decode("utf-8").splitlines()
        body = fh.read()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    n = int(lines[1])
    if lines[2 + n] != "END":
        raise ValueError(f"{path}: corrupt checkpoint header")
    out = {}
    for line in lines[2:2 + n]:
        name, dt, shape, off, nbytes = line.split(" ")
        dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
        off, nbytes = int(off), int(nbytes)
        arr = np.frombuffer(body[off:off + nbytes], dtype=np.dtype(dt)).reshape(dims)
        out[name] = arr.astype(arr.dtype.newbyteorder("="))
    return out
