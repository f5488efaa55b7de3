# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused compiled kernels for the hot inner loops.

Semantics match crossloc.kernels_py exactly up to floating-point summation
order (serial left-to-right here, pairwise in numpy). Single-threaded by
design so results are reproducible bit-for-bit run to run.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh, pow

cnp.import_array()

ctypedef fused real:
    float
    double

cdef double _GELU_C = 0.7978845608028654
cdef double _GELU_A = 0.044715


def softmax_fwd(real[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out_arr = np.empty((r, c), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] y = out_arr
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            y[i, j] = <real>exp(x[i, j] - m)
            s += y[i, j]
        for j in range(c):
            y[i, j] = <real>(y[i, j] / s)
    return out_arr


def softmax_bwd(real[:, ::1] y, real[:, ::1] gy):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1]
    out_arr = np.empty((r, c), dtype=np.asarray(y).dtype)
    cdef real[:, ::1] gx = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += gy[i, j] * y[i, j]
        for j in range(c):
            gx[i, j] = <real>(y[i, j] * (gy[i, j] - dot))
    return out_arr


def layernorm_fwd(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    dt = np.asarray(x).dtype
    y_arr = np.empty((r, c), dtype=dt)
    mu_arr = np.empty(r, dtype=dt)
    rstd_arr = np.empty(r, dtype=dt)
    cdef real[:, ::1] y = y_arr
    cdef real[::1] mu = mu_arr
    cdef real[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double m, v, d, rs
    for i in range(r):
        m = 0.0
        for j in range(c):
            m += x[i, j]
        m /= c
        v = 0.0
        for j in range(c):
            d = x[i, j] - m
            v += d * d
        v /= c
        rs = 1.0 / sqrt(v + eps)
        mu[i] = <real>m
        rstd[i] = <real>rs
        for j in range(c):
            y[i, j] = <real>((x[i, j] - m) * rs * gain[j] + bias[j])
    return y_arr, mu_arr, rstd_arr


def layernorm_bwd(real[:, ::1] x, real[::1] mu, real[::1] rstd,
                  real[::1] gain, real[:, ::1] gy):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    dt = np.asarray(x).dtype
    gx_arr = np.empty((r, c), dtype=dt)
    ggain_arr = np.zeros(c, dtype=dt)
    gbias_arr = np.zeros(c, dtype=dt)
    cdef real[:, ::1] gx = gx_arr
    cdef real[::1] ggain = ggain_arr
    cdef real[::1] gbias = gbias_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, xhat, gyg, rs, m
    for i in range(r):
        rs = rstd[i]
        m = mu[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            xhat = (x[i, j] - m) * rs
            gyg = gy[i, j] * gain[j]
            m1 += gyg
            m2 += gyg * xhat
            ggain[j] += <real>(gy[i, j] * xhat)
            gbias[j] += gy[i, j]
        m1 /= c
        m2 /= c
        for j in range(c):
            xhat = (x[i, j] - m) * rs
            gyg = gy[i, j] * gain[j]
            gx[i, j] = <real>(rs * (gyg - m1 - xhat * m2))
    return gx_arr, ggain_arr, gbias_arr


def gelu_fwd(real[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.asarray(x).dtype)
    cdef real[::1] y = out_arr
    cdef Py_ssize_t i
    cdef double u, xv
    for i in range(n):
        xv = x[i]
        u = _GELU_C * (xv + _GELU_A * xv * xv * xv)
        y[i] = <real>(0.5 * xv * (1.0 + tanh(u)))
    return out_arr


def gelu_bwd(real[::1] x, real[::1] gy):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.asarray(x).dtype)
    cdef real[::1] gx = out_arr
    cdef Py_ssize_t i
    cdef double u, t, du, xv
    for i in range(n):
        xv = x[i]
        u = _GELU_C * (xv + _GELU_A * xv * xv * xv)
        t = tanh(u)
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xv * xv)
        gx[i] = <real>(gy[i] * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du))
    return out_arr


def adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
              long t, double lr, double beta1, double beta2, double eps,
              double weight_decay, bint decoupled):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef double gi, mhat, vhat
    for i in range(n):
        gi = g[i]
        if weight_decay != 0.0 and not decoupled:
            gi = gi + weight_decay * p[i]
        m[i] = <real>(beta1 * m[i] + (1.0 - beta1) * gi)
        v[i] = <real>(beta2 * v[i] + (1.0 - beta2) * gi * gi)
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        if weight_decay != 0.0 and decoupled:
            p[i] = <real>(p[i] - lr * weight_decay * p[i])
        p[i] = <real>(p[i] - lr * mhat / (sqrt(vhat) + eps))
