"""Adam optimizer over named parameter lists."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class AdamState:
    """First/second moment buffers plus step counter for one parameter set.

    Buffers are keyed positionally against the parameter list the state was
    built for; shapes are pinned at construction.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def state_arrays(self):
        """Flat view of moment buffers for checkpointing, in stable order."""
        out = []
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out.append((f"m{i}", m))
            out.append((f"v{i}", v))
        return out

    def load_state_arrays(self, arrays):
        for i in range(len(self.m)):
            self.m[i] = arrays[f"m{i}"]
            self.v[i] = arrays[f"v{i}"]


def adam_step(state, params, grads):
    """One in-place Adam update with bias correction.

    ``grads`` is either a list aligned with ``params`` or a dict keyed by
    parameter Tensor (missing entries are treated as zero gradient).
    """
    if isinstance(grads, dict):
        grads = [grads.get(p) for p in params]
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ShapeError("adam_step", (len(params),), (len(grads),), (len(state.m),),
                         detail="parameter/gradient/state count mismatch")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = 0.0
            state.m[i] *= b1
            state.v[i] *= b2
            mhat = state.m[i] / bc1
            vhat = state.v[i] / bc2
        else:
            g = np.asarray(g)
            if g.shape != p.data.shape:
                raise ShapeError("adam_step", p.data.shape, g.shape)
            state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
            state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
            mhat = state.m[i] / bc1
            vhat = state.v[i] / bc2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params
