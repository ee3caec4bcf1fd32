"""Small parameter-holding layers on top of the tape ops."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Base class with automatic registration of parameters and submodules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_mods", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._mods[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        out = []
        for name, p in self._params.items():
            out.append((f"{prefix}{name}", p))
        for name, m in self._mods.items():
            out.extend(m.named_parameters(prefix=f"{prefix}{name}/"))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        self.items = list(mods)
        for i, m in enumerate(self.items):
            self._mods[str(i)] = m

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


def param(data, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, scale=None, dtype=np.float32):
        super().__init__()
        std = scale if scale is not None else 1.0 / np.sqrt(d_in)
        self.w = param(rng.normal(0.0, std, size=(d_in, d_out)), dtype)
        self.b = param(np.zeros(d_out), dtype) if bias else None

    def __call__(self, x):
        y = F.matmul(x, self.w)
        if self.b is not None:
            y = F.add(y, self.b)
        return y


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.gain = param(np.ones(dim), dtype)
        self.bias = param(np.zeros(dim), dtype)
        self.eps = eps

    def __call__(self, x):
        return F.layer_norm(x, self.gain, self.bias, eps=self.eps)


class Embedding(Module):
    def __init__(self, num, dim, rng, dtype=np.float32):
        super().__init__()
        self.table = param(rng.normal(0.0, 0.02, size=(num, dim)), dtype)

    def __call__(self, idx):
        return F.embedding_lookup(self.table, idx)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dtype=np.float32):
        super().__init__()
        std = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.w = param(rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel)), dtype)
        self.b = param(np.zeros(c_out), dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return F.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class GRUCell(Module):
    def __init__(self, d_in, d_hidden, rng, dtype=np.float32):
        super().__init__()
        k = 1.0 / np.sqrt(d_hidden)
        self.w_ih = param(rng.uniform(-k, k, size=(d_in, 3 * d_hidden)), dtype)
        self.w_hh = param(rng.uniform(-k, k, size=(d_hidden, 3 * d_hidden)), dtype)
        self.b_ih = param(np.zeros(3 * d_hidden), dtype)
        self.b_hh = param(np.zeros(3 * d_hidden), dtype)

    def __call__(self, x, h):
        return F.gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class MLP(Module):
    """Stack of Linear layers with an activation between them."""

    def __init__(self, dims, rng, act=F.relu, final_scale=None, dtype=np.float32):
        super().__init__()
        layers = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            layers.append(Linear(dims[i], dims[i + 1], rng,
                                 scale=final_scale if last and final_scale is not None else None,
                                 dtype=dtype))
        self.layers = ModuleList(layers)
        self.act = act

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
        return x
