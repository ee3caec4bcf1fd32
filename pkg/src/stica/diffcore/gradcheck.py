"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape


class GradCheckReport:
    """Per-parameter max relative error between tape and finite differences."""

    def __init__(self, errors, tolerance):
        self.errors = errors  # list of (name, max_rel_err)
        self.tolerance = tolerance

    @property
    def max_error(self):
        return max((e for _, e in self.errors), default=0.0)

    @property
    def ok(self):
        return self.max_error <= self.tolerance

    def violations(self):
        return [(n, e) for n, e in self.errors if e > self.tolerance]

    def __repr__(self):
        status = "ok" if self.ok else "FAIL"
        return f"GradCheckReport({status}, max_rel_err={self.max_error:.3e}, tol={self.tolerance:.1e})"


def finite_difference_check(fn, params, tolerance=1e-4, step=1e-5, names=None):
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must be a deterministic scalar-valued program reading the given
    parameter Tensors. Parameters are perturbed in place, one coordinate at
    a time, so 64-bit parameters are strongly recommended.
    """
    names = names or [f"p{i}" for i in range(len(params))]
    with Tape() as tape:
        loss = fn()
    grads = tape.gradients(loss)

    errors = []
    for name, p in zip(names, params):
        g_tape = grads.get(p)
        if g_tape is None:
            g_tape = np.zeros_like(p.data)
        g_fd = np.zeros_like(p.data)
        flat = p.data.ravel()
        fd_flat = g_fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * step)
        # scale floor keeps near-zero true gradients from inflating the ratio
        denom = np.maximum(np.maximum(np.abs(g_tape), np.abs(g_fd)), 1e-3)
        rel = np.abs(g_tape - g_fd) / denom
        errors.append((name, float(rel.max()) if rel.size else 0.0))
    return GradCheckReport(errors, tolerance)
