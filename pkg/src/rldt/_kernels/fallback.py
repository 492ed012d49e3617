"""Pure-numpy implementations of the hot training kernels.

These are the reference semantics; the compiled extension in ``_core.pyx``
implements the same contracts and is preferred at import time when available.
All arrays are float64 and C-contiguous.
"""

import numpy as np

BACKEND = "fallback"


def layernorm_fwd(x, gain, bias, eps):
    """Normalize rows of x (N, D); returns (y, xhat, inv_std)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = xhat * gain + bias
    return y, xhat, inv_std[:, 0].copy()


def layernorm_bwd(dy, xhat, inv_std, gain):
    """Backward of layernorm_fwd; returns (dx, dgain, dbias)."""
    dgain = np.sum(dy * xhat, axis=0)
    dbias = np.sum(dy, axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = inv_std[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def attn_fwd(q, k, v, allowed):
    """Masked scaled-dot-product attention.

    q, k, v: (B, H, T, Dh); allowed: (B, T, T) uint8, 1 where query i may
    attend to key j.  Disallowed logits are excluded from the softmax.
    Returns (y, w) with w the (B, H, T, T) attention weights (0 where masked).
    """
    dh = q.shape[3]
    scale = 1.0 / np.sqrt(dh)
    scores = np.matmul(q, np.swapaxes(k, 2, 3)) * scale
    mask = allowed[:, None, :, :] != 0
    scores = np.where(mask, scores, -np.inf)
    smax = np.max(scores, axis=3, keepdims=True)
    e = np.exp(scores - smax)
    e = np.where(mask, e, 0.0)
    w = e / np.sum(e, axis=3, keepdims=True)
    y = np.matmul(w, v)
    return y, w


def attn_bwd(dy, q, k, v, w):
    """Backward of attn_fwd; returns (dq, dk, dv)."""
    dh = q.shape[3]
    scale = 1.0 / np.sqrt(dh)
    dv = np.matmul(np.swapaxes(w, 2, 3), dy)
    dw = np.matmul(dy, np.swapaxes(v, 2, 3))
    # softmax backward; masked entries have w == 0 and thus ds == 0
    ds = w * (dw - np.sum(dw * w, axis=3, keepdims=True))
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(np.swapaxes(ds, 2, 3), q) * scale
    return dq, dk, dv


def adam_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One bias-corrected Adam step with decoupled weight decay, in place.

    p, g, m, v are flat float64 arrays; step is the 1-based step count.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    if weight_decay != 0.0:
        p -= lr * weight_decay * p
    p -= lr * mhat / (np.sqrt(vhat) + eps)
