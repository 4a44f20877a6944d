"""Reference implementations in plain numpy."""
from __future__ import annotations

import numpy as np


def gram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All inner products a[i] . b[j]."""
    return np.einsum("ik,jk->ij", a, b, optimize=False)


def rowdots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a[i] . b[i] for every row."""
    return np.einsum("ik,ik->i", a, b, optimize=False)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def sample_sequences(theta: np.ndarray, ctx0: int, u: np.ndarray, inv_temp: float,
                     eos: int) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling by inverse CDF on pre-drawn uniforms ``u`` (n, max_len).

    ``inv_temp == 0`` means greedy decoding. Context row of token t is t + 1.
    Returns tokens (n, max_len) padded with -1 and lengths (n,).
    """
    n, max_len = u.shape
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
                tok = min(int(np.searchsorted(cdf, u[i, t] * cdf[-1], side="right")), len(row) - 1)
            out[i, t] = tok
            lens[i] = t + 1
            if tok == eos:
                break
            ctx = tok + 1
    return out, lens


def seq_grad(theta: np.ndarray, ctx: np.ndarray, tok: np.ndarray) -> tuple[float, np.ndarray]:
    """Log-probability of tokens ``tok`` under contexts ``ctx`` and its gradient in theta."""
    grad = np.zeros_like(theta)
    lp = 0.0
    for c, o in zip(ctx, tok):
        p = softmax(theta[c])
        lp += float(np.log(p[o]))
        grad[c, o] += 1.0
        grad[c] -= p
    return lp, grad
