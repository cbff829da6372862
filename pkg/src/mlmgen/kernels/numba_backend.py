"""Numba-compiled kernels (hot path).

Same signatures and semantics as ``numpy_backend``; plain sequential
loops under ``@njit(cache=True)``.  No ``fastmath`` and no ``prange`` —
reassociation and thread scheduling would break bit-level run-to-run
reproducibility, which the rest of the stack leans on.

Importing this module raises ImportError when numba is missing; the
package falls back to the numpy backend (see ``kernels.__init__``).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"

_GELU_C = math.sqrt(2.0 / math.pi)


@njit(cache=True)
def softmax_fwd(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            y[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            y[i, j] *= inv
    return y


@njit(cache=True)
def softmax_bwd(y, gy):
    n, d = y.shape
    gx = np.empty_like(y)
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += gy[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = y[i, j] * (gy[i, j] - inner)
    return gx


@njit(cache=True)
def layernorm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty_like(x)
    mu = np.empty(n, dtype=np.float64)
    rstd = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mean = s / d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mean
            var += diff * diff
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        mu[i] = mean
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mean) * r * gain[j] + bias[j]
    return y, mu, rstd


@njit(cache=True)
def layernorm_bwd(x, gain, mu, rstd, gy):
    n, d = x.shape
    gx = np.empty_like(x)
    dgain = np.zeros(d, dtype=np.float64)
    dbias = np.zeros(d, dtype=np.float64)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxh = gy[i, j] * gain[j]
            dgain[j] += gy[i, j] * xhat
            dbias[j] += gy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxh = gy[i, j] * gain[j]
            gx[i, j] = rstd[i] * (dxh - m1 - xhat * m2)
    return gx, dgain, dbias


@njit(cache=True)
def gelu_fwd(x):
    n = x.shape[0]
    y = np.empty_like(x)
    for i in range(n):
        v = x[i]
        y[i] = 0.5 * v * (1.0 + math.tanh(_GELU_C * (v + 0.044715 * v ** 3)))
    return y


@njit(cache=True)
def gelu_bwd(x, gy):
    n = x.shape[0]
    gx = np.empty_like(x)
    for i in range(n):
        v = x[i]
        t = math.tanh(_GELU_C * (v + 0.044715 * v ** 3))
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
        gx[i] = gy[i] * dy
    return gx


@njit(cache=True)
def cross_entropy_fwd(logits, targets, ignore_index):
    n, d = logits.shape
    probs = np.empty_like(logits)
    loss_sum = 0.0
    n_valid = 0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, d):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(logits[i, j] - m)
            probs[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            probs[i, j] *= inv
        t = targets[i]
        if t != ignore_index:
            n_valid += 1
            loss_sum += -math.log(probs[i, t])
    return loss_sum, n_valid, probs


@njit(cache=True)
def cross_entropy_bwd(probs, targets, ignore_index, n_valid, gscale):
    n, d = probs.shape
    glogits = np.zeros_like(probs)
    denom = n_valid if n_valid > 0 else 1
    scale = gscale / denom
    for i in range(n):
        t = targets[i]
        if t == ignore_index:
            continue
        for j in range(d):
            glogits[i, j] = probs[i, j] * scale
        glogits[i, t] -= scale
    return glogits


@njit(cache=True)
def scatter_add_rows(out, ids, g):
    n, d = g.shape
    for i in range(n):
        row = ids[i]
        for j in range(d):
            out[row, j] += g[i, j]


@njit(cache=True)
def scatter_add_bias(gtable, buckets, g):
    heads, tq, tk = g.shape
    for h in range(heads):
        for i in range(tq):
            for j in range(tk):
                gtable[h, buckets[i, j]] += g[h, i, j]


@njit(cache=True)
def adamw_step(p, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
    n = p.shape[0]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / c1
        vhat = v[i] / c2
        p[i] -= lr * (mhat / (math.sqrt(vhat) + eps) + weight_decay * p[i])
