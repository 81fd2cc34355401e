"""Dense-tensor numerical core with reverse-mode differentiation.

Tensors wrap contiguous row-major numpy buffers (float64 by default).
Every operation records its parents and a backward closure; backward()
replays the tape in reverse topological order and accumulates gradients
additively, so fan-out (a tensor used twice) sums both contributions.
No operation mutates its inputs.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.special import erf

from .errors import NumericalError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """N-dimensional array participating in a differentiable computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self):
        backward(self)

    # Operator sugar over the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Topologically ordered record of the ops behind a root tensor.

    nodes[i]'s parents always appear at indices < i; the record is acyclic
    by construction because tensors are immutable once created.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)


def _result(data, parents, backward_fn, op):
    """Wrap an op output, recording provenance and enforcing finiteness."""
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    out._op = op
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss, graph=None):
    """Propagate d(loss)/d(tensor) into .grad for every requires_grad tensor.

    loss must be a scalar (one element). Gradients accumulate additively
    across uses and across repeated backward calls; call zero_grad between
    optimization steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if graph is None:
        graph = Graph.trace(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.data.shape))
    return _result(data, (a, b), backward_fn, "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-grad, b.data.shape))
    return _result(data, (a, b), backward_fn, "subtract")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.data.shape))
    return _result(data, (a, b), backward_fn, "multiply")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    data = a.data * factor
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * factor)
    return _result(data, (a,), backward_fn, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast, last two contract as [m,k]@[k,n]."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)
    def backward_fn(grad):
        if a.requires_grad:
            ga = np.matmul(grad, b.data.swapaxes(-1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), grad)
            b._accumulate(_unbroadcast(gb, b.data.shape))
    return _result(data, (a, b), backward_fn, "matmul")


def transpose(a: Tensor, axes=None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(perm))
    data = np.transpose(a.data, perm)
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(np.transpose(grad, inv))
    return _result(data, (a,), backward_fn, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad.reshape(a.data.shape))
    return _result(data, (a,), backward_fn, "reshape")


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    def backward_fn(grad):
        pieces = np.split(grad, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)
    return _result(data, tuple(tensors), backward_fn, "concat")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a [N, D] table; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("embedding ids must be integers")
    n = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise ValueError(f"embedding id {bad} out of range [0, {n})")
    data = table.data[ids]
    def backward_fn(grad):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1), grad.reshape(-1, table.data.shape[1]))
            table._accumulate(g)
    return _result(data, (table,), backward_fn, "embedding_lookup")


def take_index(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along an axis, dropping that axis."""
    data = np.take(a.data, index, axis=axis)
    def backward_fn(grad):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            sl = [slice(None)] * a.ndim
            sl[axis] = index
            g[tuple(sl)] = grad
            a._accumulate(g)
    return _result(data, (a,), backward_fn, "take_index")


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)
    def backward_fn(grad):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(grad, a.data.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(grad, axis), a.data.shape).copy())
    return _result(data, (a,), backward_fn, "reduce_sum")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis)
    def backward_fn(grad):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(grad / count, a.data.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(grad / count, axis), a.data.shape).copy())
    return _result(data, (a,), backward_fn, "reduce_mean")


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * (a.data > 0))
    return _result(data, (a,), backward_fn, "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian Error Linear Unit, x * Phi(x) via erf."""
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT2))
    data = a.data * cdf
    def backward_fn(grad):
        if a.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(grad * (cdf + a.data * pdf))
    return _result(data, (a,), backward_fn, "gelu")


def softmax_rows(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked entries (mask False) come out exactly 0.

    Numerically stabilized by row-max subtraction. A fully-masked row is an
    error since its distribution would be undefined.
    """
    if a.data.shape[-1] < 1:
        raise ValueError("softmax over an empty axis")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax_rows: fully-masked row")
        logits = np.where(mask, a.data, -np.inf)
    else:
        logits = a.data
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    def backward_fn(grad):
        if a.requires_grad:
            inner = (grad * data).sum(axis=-1, keepdims=True)
            a._accumulate(data * (grad - inner))
    return _result(data, (a,), backward_fn, "softmax_rows")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Standardize over the last axis, then apply the affine (gain, bias)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data
    def backward_fn(grad):
        dxhat = grad * gain.data
        if a.requires_grad:
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv_std * (dxhat - m1 - xhat * m2))
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(grad * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(grad, bias.data.shape))
    return _result(data, (a, gain, bias), backward_fn, "layer_norm")


def dropout(a: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(a.data.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    data = a.data * keep * factor
    def backward_fn(grad):
        if a.requires_grad:
            a._accumulate(grad * keep * factor)
    return _result(data, (a,), backward_fn, "dropout")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def unfold_windows(a: Tensor, size: int) -> Tensor:
    """Slide a length-`size` window over axis -2 of [..., L, d] -> [..., L-size+1, size*d]."""
    length, width = a.data.shape[-2], a.data.shape[-1]
    if length < size:
        raise ValueError(f"window size {size} exceeds sequence length {length}")
    view = np.lib.stride_tricks.sliding_window_view(a.data, size, axis=-2)
    # view: [..., L-size+1, d, size] -> [..., L-size+1, size, d] -> flattened windows
    data = np.ascontiguousarray(view.swapaxes(-1, -2)).reshape(
        a.data.shape[:-2] + (length - size + 1, size * width))
    out_len = length - size + 1
    def backward_fn(grad):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            gw = grad.reshape(grad.shape[:-1] + (size, width))
            for j in range(size):
                g[..., j:j + out_len, :] += gw[..., :, j, :]
            a._accumulate(g)
    return _result(data, (a,), backward_fn, "unfold_windows")


def conv1d(x: Tensor, filters: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid cross-correlation of [..., L, d] with filters [s, d, m] -> [..., L-s+1, m]."""
    s, d, m = filters.data.shape
    if x.data.shape[-1] != d:
        raise ValueError(f"conv1d channel mismatch: input {x.data.shape} vs filters {filters.data.shape}")
    windows = unfold_windows(x, s)
    flat = reshape(filters, (s * d, m))
    out = matmul(windows, flat)
    if bias is not None:
        out = add(out, bias)
    return out


def max_pool_over_length(a: Tensor) -> Tensor:
    """Per-channel max over axis -2 of [..., L, m]; gradient goes to the first argmax."""
    if a.data.shape[-2] < 1:
        raise ValueError("max_pool_over_length needs at least one row")
    idx = a.data.argmax(axis=-2)
    data = np.take_along_axis(a.data, np.expand_dims(idx, -2), axis=-2).squeeze(-2)
    def backward_fn(grad):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.put_along_axis(g, np.expand_dims(idx, -2), np.expand_dims(grad, -2), axis=-2)
            a._accumulate(g)
    return _result(data, (a,), backward_fn, "max_pool_over_length")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy between row softmaxes of [N, V] logits and integer labels [N]."""
    labels = np.asarray(labels)
    n, v = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match logits rows {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= v):
        raise ValueError("label id out of vocabulary range")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + logits.data.max(axis=-1)
    picked = logits.data[np.arange(n), labels]
    data = np.asarray((lse - picked).mean())
    def backward_fn(grad):
        if logits.requires_grad:
            p = np.exp(shifted)
            p /= p.sum(axis=-1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            logits._accumulate(grad * p / n)
    return _result(data, (logits,), backward_fn, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# serialization: rank + dims as little-endian int64, then little-endian float64
# ---------------------------------------------------------------------------

def tensor_to_bytes(t) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = np.asarray(arr, dtype="<f8")  # tobytes() emits C order regardless of layout
    header = struct.pack("<q", arr.ndim) + struct.pack(f"<{arr.ndim}q", *arr.shape)
    return header + arr.tobytes()


def tensor_from_bytes(buf, offset: int = 0):
    """Parse one serialized tensor; returns (array, next_offset)."""
    (rank,) = struct.unpack_from("<q", buf, offset)
    offset += 8
    if rank < 0:
        raise ValueError("corrupt tensor header: negative rank")
    dims = struct.unpack_from(f"<{rank}q", buf, offset)
    offset += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims)
    offset += 8 * count
    return arr.astype(np.float64), offset
