"""numba-compiled versions of the kernels in ``_numpy``.

Loops mirror the numpy reference; parallel loops split only over output
rows, so each sum is accumulated sequentially by a single thread.
"""
from __future__ import annotations

import numpy as np
from numba import config, njit, prange

# prefer layers that need no version probe (an old TBB only produces a warning)
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(parallel=True, cache=True)
def gram(a, b):
    m, d = a.shape
    n = b.shape[0]
    out = np.empty((m, n))
    for i in prange(m):
        for j in range(n):
            s = 0.0
            for k in range(d):
                s += a[i, k] * b[j, k]
            out[i, j] = s
    return out


@njit(parallel=True, cache=True)
def rowdots(a, b):
    m, d = a.shape
    out = np.empty(m)
    for i in prange(m):
        s = 0.0
        for k in range(d):
            s += a[i, k] * b[i, k]
        out[i] = s
    return out


@njit(cache=True)
def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


@njit(cache=True)
def sample_sequences(theta, ctx0, u, inv_temp, eos):
    n, max_len = u.shape
    v = theta.shape[1]
    out = np.full((n, max_len), -1, dtype=np.int64)
    lens = np.zeros(n, dtype=np.int64)
    for i in range(n):
        ctx = ctx0
        for t in range(max_len):
            row = theta[ctx]
            if inv_temp == 0.0:
                tok = int(np.argmax(row))
            else:
                cdf = np.cumsum(softmax(row * inv_temp))
                tok = min(int(np.searchsorted(cdf, u[i, t] * cdf[-1], side="right")), v - 1)
            out[i, t] = tok
            lens[i] = t + 1
            if tok == eos:
                break
            ctx = tok + 1
    return out, lens


@njit(cache=True)
def seq_grad(theta, ctx, tok):
    grad = np.zeros_like(theta)
    lp = 0.0
    for t in range(ctx.shape[0]):
        c = ctx[t]
        o = tok[t]
        p = softmax(theta[c])
        lp += np.log(p[o])
        grad[c, o] += 1.0
        for k in range(theta.shape[1]):
            grad[c, k] -= p[k]
    return lp, grad
