"""Tensor container and the recording tape for reverse-mode differentiation."""

from __future__ import annotations

import threading

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, out, inputs, backward, op):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tape:
    """Records ops in execution order; used as a context manager.

    Creation order is a valid topological order, so backward simply walks
    the node list in reverse. Outside any active tape no graph is kept and
    forward computation is pure.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, out, inputs, backward, op):
        self.nodes.append(_Node(out, inputs, backward, op))

    def backward(self, loss, params=None):
        """Return gradients of scalar ``loss``.

        With ``params`` (a mapping or sequence of tensors) the result is a
        dict keyed like ``params`` holding a gradient for every entry, zero
        for tensors that did not take part. Without it, a dict keyed by
        ``id(tensor)`` for all leaves reached.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        if params is None:
            return grads
        items = params.items() if isinstance(params, dict) else enumerate(params)
        out = {}
        for k, p in items:
            g = grads.get(id(p))
            out[k] = np.zeros_like(p.data) if g is None else np.reshape(g, p.data.shape)
        return out


def record(out_data, inputs, backward, op):
    """Wrap ``out_data`` in a Tensor and put the op on the active tape."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{op}: non-finite value in output")
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    if req:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, backward, op)
        else:
            out.requires_grad = False
    return out
