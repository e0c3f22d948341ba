"""Pure-numpy implementations of the hot numerical kernels.

Same signatures as the compiled ``_ckernels`` extension; the active backend
is picked in :mod:`domainmoe.backend` at import time.  All functions accept
float32 or float64 arrays and preserve the input dtype.
"""

import numpy as np


def softmax2d(x):
    """Row-wise stabilized softmax of a 2-d array."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm of a 2-d array.

    Returns (y, mean, rstd); mean/rstd are kept for the backward pass.
    Population (biased) variance, eps inside the square root.
    """
    mean = x.mean(axis=1, keepdims=True)
    var = np.square(x - mean).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gain + bias
    return y, mean.ravel(), rstd.ravel()


def layer_norm_bwd(dy, x, gain, mean, rstd):
    """Backward of layer_norm_fwd. Returns (dx, dgain, dbias)."""
    rs = rstd[:, None]
    xhat = (x - mean[:, None]) * rs
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    # dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rs * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam step on flat views. t is the 1-based step count."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
