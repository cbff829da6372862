"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in ``numba_backend`` with identical
signature and semantics.  This module is the fallback path and the
semantic reference: the numba versions are tested for agreement against
these.  All arrays are float64 and C-contiguous unless noted.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array with max-subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_bwd(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Backward of row-wise softmax given its output ``y``."""
    inner = np.sum(gy * y, axis=1, keepdims=True)
    return y * (gy - inner)


def layernorm_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                  eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row layer norm.  Returns (y, mean, rstd); the latter two are
    cached for the backward pass."""
    mu = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[:, None]) * rstd[:, None]
    return xhat * gain + bias, mu, rstd


def layernorm_bwd(x: np.ndarray, gain: np.ndarray, mu: np.ndarray,
                  rstd: np.ndarray, gy: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of layer norm.  Returns (gx, dgain, dbias)."""
    xhat = (x - mu[:, None]) * rstd[:, None]
    dgain = np.sum(gy * xhat, axis=0)
    dbias = np.sum(gy, axis=0)
    dxhat = gy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return gx, dgain, dbias


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    """tanh-approximate GELU on a flat array."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Backward of tanh-approximate GELU."""
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du
    return gy * dy


def cross_entropy_fwd(logits: np.ndarray, targets: np.ndarray,
                      ignore_index: int
                      ) -> tuple[float, int, np.ndarray]:
    """Mean NLL over rows whose target is not ``ignore_index``.

    Returns (loss_sum, n_valid, probs); loss is the *sum* over valid
    rows — the caller divides by ``n_valid``.  ``probs`` is the full
    softmax matrix, cached for the backward pass.
    """
    probs = softmax_fwd(logits)
    valid = targets != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, 0, probs
    rows = np.nonzero(valid)[0]
    picked = probs[rows, targets[rows]]
    loss_sum = float(-np.log(picked).sum())
    return loss_sum, n_valid, probs


def cross_entropy_bwd(probs: np.ndarray, targets: np.ndarray,
                      ignore_index: int, n_valid: int,
                      gscale: float) -> np.ndarray:
    """Backward of mean cross-entropy given the cached softmax."""
    glogits = probs.copy()
    valid = targets != ignore_index
    rows = np.nonzero(valid)[0]
    glogits[rows, targets[rows]] -= 1.0
    glogits[~valid] = 0.0
    glogits *= gscale / max(n_valid, 1)
    return glogits


def scatter_add_rows(out: np.ndarray, ids: np.ndarray,
                     g: np.ndarray) -> None:
    """``out[ids[n]] += g[n]`` for each row n, in place (duplicate ids
    accumulate).  Gradient of an embedding gather."""
    np.add.at(out, ids, g)


def scatter_add_bias(gtable: np.ndarray, buckets: np.ndarray,
                     g: np.ndarray) -> None:
    """``gtable[h, buckets[i, j]] += g[h, i, j]`` in place.  Gradient of
    the relative-position bias lookup."""
    heads = gtable.shape[0]
    for h in range(heads):
        np.add.at(gtable[h], buckets, g[h])


def adamw_step(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
               lr: float, beta1: float, beta2: float, eps: float,
               weight_decay: float, t: int) -> None:
    """Fused AdamW update, in place on flat float64 arrays.

    Decoupled weight decay; bias-corrected first/second moments.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)
