"""Network building blocks on top of the tensor engine."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameters:
    """Ordered registry of named trainable leaf tensors."""

    def __init__(self):
        self._items: dict[str, Tensor] = {}

    def add(self, name, data, dtype=np.float32):
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
        self._items[name] = t
        return t

    def __getitem__(self, name):
        return self._items[name]

    def __contains__(self, name):
        return name in self._items

    def __iter__(self):
        return iter(self._items)

    def names(self):
        return list(self._items)

    def items(self):
        return self._items.items()

    def zero_grad(self):
        for t in self._items.values():
            t.grad = None

    def grads(self):
        """name -> gradient array; zeros for leaves the loss never reached."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._items.items()
        }

    def values_copy(self):
        return {name: t.data.copy() for name, t in self._items.items()}

    def load_values(self, values):
        for name, t in self._items.items():
            arr = np.asarray(values[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != expected {t.data.shape}")
            t.data = arr


def linear_bound(fan_in):
    return 1.0 / math.sqrt(fan_in)


def init_linear(params, rng, name, fan_in, fan_out, dtype=np.float32):
    """Weight uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), bias zeros."""
    b = linear_bound(fan_in)
    w = params.add(f"{name}_w", rng.uniform(-b, b, size=(fan_in, fan_out)), dtype)
    bias = params.add(f"{name}_b", np.zeros(fan_out), dtype)
    return w, bias


def init_embedding(params, rng, name, n_rows, dim, dtype=np.float32):
    return params.add(name, rng.uniform(-0.1, 0.1, size=(n_rows, dim)), dtype)


def init_gru(params, rng, name, input_dim, state_dim, dtype=np.float32):
    """Three gates, each with an input and a recurrent matrix plus bias."""
    for gate in ("z", "r", "h"):
        bi = linear_bound(input_dim)
        bs = linear_bound(state_dim)
        params.add(f"{name}_w{gate}", rng.uniform(-bi, bi, size=(input_dim, state_dim)), dtype)
        params.add(f"{name}_u{gate}", rng.uniform(-bs, bs, size=(state_dim, state_dim)), dtype)
        params.add(f"{name}_b{gate}", np.zeros(state_dim), dtype)


def linear(x, w, b):
    return T.add(T.matmul(x, w), b)


def gru_cell(x, state, w):
    """One gated-recurrent update.

    ``x`` is ``[B, input_dim]``, ``state`` ``[B, state_dim]``; ``w`` maps
    the nine weight names ``wz,uz,bz,wr,ur,br,wh,uh,bh`` to tensors.

    update  z = sigmoid(x Wz + s Uz + bz)
    reset   r = sigmoid(x Wr + s Ur + br)
    cand    c = tanh(x Wh + (r*s) Uh + bh)
    next    s' = (1 - z)*s + z*c
    """
    z = T.sigmoid(T.add(linear(x, w["wz"], w["bz"]), T.matmul(state, w["uz"])))
    r = T.sigmoid(T.add(linear(x, w["wr"], w["br"]), T.matmul(state, w["ur"])))
    cand = T.tanh(T.add(linear(x, w["wh"], w["bh"]), T.matmul(T.mul(r, state), w["uh"])))
    one = Tensor(np.ones((), dtype=state.dtype))
    return T.add(T.mul(T.sub(one, z), state), T.mul(z, cand))


def gru_weights(params, name):
    keys = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")
    return {key: params[f"{name}_{key}"] for key in keys}
