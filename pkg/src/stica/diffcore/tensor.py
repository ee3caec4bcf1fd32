"""Reverse-mode autodiff core: tensors and the gradient tape.

Tensors wrap numpy arrays. Operations in :mod:`stica.diffcore.functional`
compute their forward value eagerly and, when a tape is active, record a
node holding the inputs, the output and a vector-Jacobian closure. The
backward pass walks the tape once in reverse, accumulating gradients
additively at fan-out points.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "Tape", "ShapeError", "active_tape", "backward"]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, primitive, *shapes, detail=""):
        msg = f"{primitive}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.primitive = primitive
        self.shapes = shapes


class Tensor:
    """A numpy-backed value, optionally tracked by the active tape.

    ``requires_grad`` is True for leaf parameters and for any tensor
    produced by an op that consumed a grad-tracked tensor while a tape
    was active. Data is treated as immutable once wrapped.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in _FLOAT_DTYPES and not np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        """Same buffer, severed from the tape."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # Arithmetic sugar; implementations live in functional.py (set at import).
    def __add__(self, other):
        return _F.add(self, other)

    def __radd__(self, other):
        return _F.add(other, self)

    def __sub__(self, other):
        return _F.sub(self, other)

    def __rsub__(self, other):
        return _F.sub(other, self)

    def __mul__(self, other):
        return _F.mul(self, other)

    def __rmul__(self, other):
        return _F.mul(other, self)

    def __truediv__(self, other):
        return _F.div(self, other)

    def __rtruediv__(self, other):
        return _F.div(other, self)

    def __neg__(self):
        return _F.neg(self)

    def __matmul__(self, other):
        return _F.matmul(self, other)

    def __pow__(self, p):
        return _F.power(self, p)

    def __getitem__(self, idx):
        return _F.getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _F.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return _F.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _F.reduce_mean(self, axis=axis, keepdims=keepdims)


_active_tape = None


def active_tape():
    return _active_tape


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Use as a context manager; ops executed inside record themselves.
    Nodes are (inputs, output, vjp) triples where ``vjp(grad_out)``
    returns one gradient (or None) per input.
    """

    __slots__ = ("nodes", "_prev")

    def __init__(self):
        self.nodes = []
        self._prev = None

    def __enter__(self):
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = self._prev
        self._prev = None
        return False

    def record(self, inputs, output, vjp):
        self.nodes.append((inputs, output, vjp))

    def gradients(self, loss):
        """Gradient of scalar ``loss`` w.r.t. every leaf parameter on this tape.

        Returns a dict keyed by leaf Tensor (identity). Reverse traversal
        visits each node exactly once; fan-out accumulates additively.
        """
        if loss.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        produced = set()
        for _, out, _ in self.nodes:
            produced.add(id(out))
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for inputs, output, vjp in reversed(self.nodes):
            g = grads.pop(id(output), None)
            if g is None:
                continue
            in_grads = vjp(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = t
        return {t: grads[key] for key, t in leaves.items()}


def backward(tape, loss):
    """Functional alias for :meth:`Tape.gradients`."""
    return tape.gradients(loss)


def _record(inputs, out_data, vjp):
    """Wrap ``out_data``; record the node if a tape is active and grad flows.

    ``inputs`` must already be a tuple of Tensors aligned positionally with
    the gradients returned by ``vjp``.
    """
    tape = _active_tape
    out = Tensor(out_data)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, vjp)
    return out


# functional module is attached here post-import to break the cycle
_F = None


def _attach_functional(mod):
    global _F
    _F = mod
