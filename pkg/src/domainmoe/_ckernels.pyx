# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: softmax, layer norm fwd/bwd, Adam update.

Mirrors the signatures in _npkernels.py; fused rows avoid the multiple
full-array passes the numpy fallback makes.
"""

import numpy as np

cimport cython
from libc.math cimport exp, sqrt, pow

ctypedef fused real:
    float
    double


def softmax2d(real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    out_np = np.empty((n, d), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, j
    cdef real m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0
        for j in range(d):
            out[i, j] = exp(x[i, j] - m)
            s += out[i, j]
        for j in range(d):
            out[i, j] /= s
    return out_np


def layer_norm_fwd(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dt = np.asarray(x).dtype
    y_np = np.empty((n, d), dtype=dt)
    mean_np = np.empty(n, dtype=dt)
    rstd_np = np.empty(n, dtype=dt)
    cdef real[:, ::1] y = y_np
    cdef real[::1] mean = mean_np, rstd = rstd_np
    cdef Py_ssize_t i, j
    cdef double mu, var, dx
    cdef real rs
    for i in range(n):
        mu = 0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0
        for j in range(d):
            dx = x[i, j] - mu
            var += dx * dx
        var /= d
        rs = <real> (1.0 / sqrt(var + eps))
        mean[i] = <real> mu
        rstd[i] = rs
        for j in range(d):
            y[i, j] = (x[i, j] - <real> mu) * rs * gain[j] + bias[j]
    return y_np, mean_np, rstd_np


def layer_norm_bwd(real[:, ::1] dy, real[:, ::1] x, real[::1] gain,
                   real[::1] mean, real[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dt = np.asarray(x).dtype
    dx_np = np.empty((n, d), dtype=dt)
    dgain_np = np.zeros(d, dtype=dt)
    dbias_np = np.zeros(d, dtype=dt)
    cdef real[:, ::1] dx = dx_np
    cdef real[::1] dgain = dgain_np, dbias = dbias_np
    cdef Py_ssize_t i, j
    cdef double m1, m2, xhat, dxh
    cdef real rs, mu
    for i in range(n):
        rs = rstd[i]
        mu = mean[i]
        m1 = 0
        m2 = 0
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gain[j]
            dgain[j] += <real> (dy[i, j] * xhat)
            dbias[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gain[j]
            dx[i, j] = <real> (rs * (dxh - m1 - xhat * m2))
    return dx_np, dgain_np, dbias_np


def adam_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    for i in range(n):
        m[i] = <real> (beta1 * m[i] + (1.0 - beta1) * g[i])
        v[i] = <real> (beta2 * v[i] + (1.0 - beta2) * g[i] * g[i])
        p[i] -= <real> (lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps))
