# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels; same contracts as fallback.py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, pow, INFINITY

cnp.import_array()

BACKEND = "compiled"


def layernorm_fwd(double[:, ::1] x, double[::1] gain, double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y_arr = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=2] xhat_arr = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=1] inv_std_arr = np.empty(n)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv_std = inv_std_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, diff, isd
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        isd = 1.0 / sqrt(var + eps)
        inv_std[i] = isd
        for j in range(d):
            xhat[i, j] = (x[i, j] - mu) * isd
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return y_arr, xhat_arr, inv_std_arr


def layernorm_bwd(double[:, ::1] dy, double[:, ::1] xhat, double[::1] inv_std,
                  double[::1] gain):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx_arr = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=1] dg_arr = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] db_arr = np.zeros(d)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, dxh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
            dg[j] += dy[i, j] * xhat[i, j]
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dx[i, j] = inv_std[i] * (dy[i, j] * gain[j] - m1 - xhat[i, j] * m2)
    return dx_arr, dg_arr, db_arr


def attn_fwd(double[:, :, :, ::1] q, double[:, :, :, ::1] k,
             double[:, :, :, ::1] v, unsigned char[:, :, ::1] allowed):
    cdef Py_ssize_t b = q.shape[0], h = q.shape[1], t = q.shape[2], dh = q.shape[3]
    cdef cnp.ndarray[double, ndim=4] y_arr = np.zeros((b, h, t, dh))
    cdef cnp.ndarray[double, ndim=4] w_arr = np.zeros((b, h, t, t))
    cdef double[:, :, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] w = w_arr
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef Py_ssize_t bi, hi, i, j, x
    cdef double s, smax, tot
    for bi in range(b):
        for hi in range(h):
            for i in range(t):
                smax = -INFINITY
                for j in range(t):
                    if allowed[bi, i, j]:
                        s = 0.0
                        for x in range(dh):
                            s += q[bi, hi, i, x] * k[bi, hi, j, x]
                        s *= scale
                        w[bi, hi, i, j] = s
                        if s > smax:
                            smax = s
                tot = 0.0
                for j in range(t):
                    if allowed[bi, i, j]:
                        s = exp(w[bi, hi, i, j] - smax)
                        w[bi, hi, i, j] = s
                        tot += s
                for j in range(t):
                    if allowed[bi, i, j]:
                        w[bi, hi, i, j] /= tot
                        for x in range(dh):
                            y[bi, hi, i, x] += w[bi, hi, i, j] * v[bi, hi, j, x]
    return y_arr, w_arr


def attn_bwd(double[:, :, :, ::1] dy, double[:, :, :, ::1] q,
             double[:, :, :, ::1] k, double[:, :, :, ::1] v,
             double[:, :, :, ::1] w):
    cdef Py_ssize_t b = q.shape[0], h = q.shape[1], t = q.shape[2], dh = q.shape[3]
    cdef cnp.ndarray[double, ndim=4] dq_arr = np.zeros((b, h, t, dh))
    cdef cnp.ndarray[double, ndim=4] dk_arr = np.zeros((b, h, t, dh))
    cdef cnp.ndarray[double, ndim=4] dv_arr = np.zeros((b, h, t, dh))
    cdef double[:, :, :, ::1] dq = dq_arr
    cdef double[:, :, :, ::1] dk = dk_arr
    cdef double[:, :, :, ::1] dv = dv_arr
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef Py_ssize_t bi, hi, i, j, x
    cdef double dwij, dot, ds
    for bi in range(b):
        for hi in range(h):
            for i in range(t):
                dot = 0.0
                for j in range(t):
                    if w[bi, hi, i, j] != 0.0:
                        dwij = 0.0
                        for x in range(dh):
                            dwij += dy[bi, hi, i, x] * v[bi, hi, j, x]
                        dot += dwij * w[bi, hi, i, j]
                for j in range(t):
                    if w[bi, hi, i, j] != 0.0:
                        dwij = 0.0
                        for x in range(dh):
                            dwij += dy[bi, hi, i, x] * v[bi, hi, j, x]
                            dv[bi, hi, j, x] += w[bi, hi, i, j] * dy[bi, hi, i, x]
                        ds = w[bi, hi, i, j] * (dwij - dot) * scale
                        for x in range(dh):
                            dq[bi, hi, i, x] += ds * k[bi, hi, j, x]
                            dk[bi, hi, j, x] += ds * q[bi, hi, i, x]
    return dq_arr, dk_arr, dv_arr


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                long step, double lr, double beta1, double beta2, double eps,
                double weight_decay):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, <double> step)
    cdef double bc2 = 1.0 - pow(beta2, <double> step)
    cdef Py_ssize_t i
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        if weight_decay != 0.0:
            p[i] -= lr * weight_decay * p[i]
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
