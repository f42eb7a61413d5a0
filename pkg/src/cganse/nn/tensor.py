"""Tensors, parameters and the recording tape for reverse-mode differentiation.

Operations executed while a :class:`Tape` is active append a node holding their
inputs and a backward closure. ``Tape.backward`` walks those nodes in exact
reverse execution order. Outside a tape nothing is recorded, which is how
inference runs.
"""

from __future__ import annotations

import threading

import numpy as np

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
    """An n-dimensional value with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{', grad' if self.requires_grad else ''})"

    # arithmetic sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)


class Parameter(Tensor):
    """A trainable tensor with a stable id used as its checkpoint key."""

    __slots__ = ()

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed ops.

    Use as a context manager around the forward pass, then call
    :meth:`backward` once on the scalar result.
    """

    def __init__(self):
        self.nodes = []
        self._used = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def record(self, out, inputs, backward):
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss, grad=None):
        if self._used:
            raise RuntimeError("tape already consumed; run a fresh forward pass")
        self._used = True
        if grad is None:
            if loss.size != 1:
                raise ValueError("backward without an explicit grad needs a scalar output")
            grad = np.ones_like(loss.data)
        grads = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # whatever is left belongs to leaves
        leaves = {}
        for node in self.nodes:
            for t in node.inputs:
                if isinstance(t, Tensor) and t.requires_grad and id(t) in grads:
                    leaves[id(t)] = t
        if id(loss) in grads and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            g = grads[key]
            if isinstance(t, Parameter):
                t.accumulate(g)
            elif t.grad is None:
                t.grad = np.array(g, copy=True)
            else:
                t.grad = t.grad + g
        self.nodes = []


def make_result(data, inputs, backward):
    """Wrap an op output and record it on the active tape if any input needs grad."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
