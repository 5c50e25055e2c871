"""Minimal dense reverse-mode automatic differentiation.

A dynamic tape records every primitive executed inside a ``with Tape()``
block; ``Tape.backward`` replays the records in strict reverse execution
order, accumulating adjoints. Only the primitives the fusion model needs
are provided. 64-bit is the default dtype; 32-bit tensors are supported
for faster training but gradient checks require 64-bit.
"""

from __future__ import annotations

import numpy as np

from .errors import NonScalarOutput, ShapeMismatch


class Tensor:
    """Dense array node. Leaves created with requires_grad=True own a
    persistent .grad buffer that backward() accumulates into."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > 3:
            raise ShapeMismatch(f"rank {arr.ndim} > 3 not supported")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape}>"


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives, replayed by backward()."""

    def __init__(self):
        self.records = []  # (output, inputs, vjp)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, output: Tensor):
        """Populate .grad of every requires_grad leaf reachable from
        output (a scalar). Adjoints are accumulated, never overwritten."""
        if output.data.size != 1:
            raise NonScalarOutput(
                f"backward needs a scalar, got shape {output.shape}")
        adj = {id(output): np.ones_like(output.data)}
        for out, inputs, vjp in reversed(self.records):
            g = adj.get(id(out))
            if g is None:
                continue
            for t, gin in zip(inputs, vjp(g)):
                if gin is None:
                    continue
                key = id(t)
                if key in adj:
                    adj[key] = adj[key] + gin
                else:
                    adj[key] = gin
        seen = set()
        leaves = [output] + [t for _, inputs, _ in self.records
                             for t in inputs]
        for t in leaves:
            if t.requires_grad and id(t) not in seen and id(t) in adj:
                t.grad += adj[id(t)].reshape(t.shape)
                seen.add(id(t))


def _record(output, inputs, vjp):
    if _TAPES:
        _TAPES[-1].records.append((output, tuple(inputs), vjp))


def _unbroadcast_bias(g, shape):
    # reduce a full-shape adjoint back to a trailing-axis bias shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


# ---------------------------------------------------------------------------
# primitives

def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and b.shape != a.shape[-1:]:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (g, _unbroadcast_bias(g, b.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data)
    _record(out, (a, b), lambda g: (g * b.data, g * a.data))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    _record(out, (a,), lambda g: (g * c,))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    _record(out, (a,), lambda g: (g * (a.data > 0),))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data))
    _record(out, (a,),
            lambda g: (g / (1.0 + np.exp(-a.data)),))
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction (the
    only non-algebraic rewrite in the engine)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)
    _record(out, (a,), vjp)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(
            f"layer_norm gain/bias {gain.shape}/{bias.shape} vs x {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def vjp(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = _unbroadcast_bias(g * xhat, gain.shape)
        dbias = _unbroadcast_bias(g, bias.shape)
        return dx, dgain, dbias
    _record(out, (x, gain, bias), vjp)
    return out


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.mean(axis=axis))
    n = a.data.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, float(g) / n),)
        return (np.expand_dims(g, axis).repeat(n, axis=axis) / n,)
    _record(out, (a,), vjp)
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    widths = [t.shape[axis] for t in tensors]

    def vjp(g):
        splits = np.split(g, np.cumsum(widths)[:-1], axis=axis)
        return tuple(splits)
    _record(out, tuple(tensors), vjp)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose needs rank 2, got {a.shape}")
    out = Tensor(a.data.T)
    _record(out, (a,), lambda g: (g.T,))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)
    _record(out, (table,), vjp)
    return out


def mse(pred: Tensor, target) -> Tensor:
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != tgt.shape:
        raise ShapeMismatch(f"mse {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    out = Tensor(np.mean(diff * diff))
    n = diff.size
    _record(out, (pred,), lambda g: (float(g) * 2.0 * diff / n,))
    return out


# ---------------------------------------------------------------------------
# finite-difference verification

class GradCheckReport:
    def __init__(self, errors: dict, tol: float):
        self.errors = errors
        self.tol = tol

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def __repr__(self):
        return (f"<GradCheckReport max={self.max_error:.3e} "
                f"tol={self.tol:g} passed={self.passed}>")


def gradient_check(f, params: dict, h: float = 1e-6,
                   tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar program f against
    central finite differences, per parameter.

    f takes no arguments and closes over the tensors in ``params``; it is
    re-executed for every probe, so it must be deterministic.
    """
    for t in params.values():
        t.zero_grad()
    with Tape() as tape:
        out = f()
    tape.backward(out)

    errors = {}
    for name, t in params.items():
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f().item()
            flat[k] = orig - h
            fm = f().item()
            flat[k] = orig
            fd_flat[k] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(t.grad), np.abs(fd)), 1e-8)
        errors[name] = float(np.max(np.abs(t.grad - fd) / denom))
    return GradCheckReport(errors, tol)
