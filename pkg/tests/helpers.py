"""Shared test oracles: central finite differences and gradient comparison."""

from __future__ import annotations

import numpy as np

from causalmob.tensor import Tensor

FD_STEP = 1e-5
REL_TOL = 1e-4


def numeric_grad(fn, values, step=FD_STEP):
    """Central-difference gradients of ``fn`` w.r.t. a dict of float64 arrays.

    ``fn`` receives the dict and returns a python float. Entirely
    independent of the reverse-mode machinery.
    """
    grads = {}
    for name, base in values.items():
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn(values)
            flat[i] = orig - step
            down = fn(values)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    """max_i |a_i - n_i| / max(1, |n_i|), elementwise over matching dicts."""
    worst = 0.0
    for name in numeric:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = numeric[name]
        denom = np.maximum(1.0, np.abs(n))
        err = np.abs(a - n) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def leaf(values, name):
    return Tensor(values[name], requires_grad=True, dtype=np.float64)
