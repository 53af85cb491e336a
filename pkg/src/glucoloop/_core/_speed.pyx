# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: composite GP covariance and the RK4 plant stepper.

Signatures mirror glucoloop._core._pyref exactly; the test suite asserts
both backends agree to machine precision.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sin

cnp.import_array()


def composite_kernel(t1, t2, double theta2, double l_p, double period, double l_e):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a1 = np.ascontiguousarray(t1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a2 = np.ascontiguousarray(t2, dtype=np.float64)
    cdef Py_ssize_t n1 = a1.shape[0], n2 = a2.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n1, n2), dtype=np.float64)
    cdef double pi_over_period = np.pi / period
    cdef double inv_lp2 = 2.0 / (l_p * l_p)
    cdef double inv_le = 1.0 / l_e
    cdef Py_ssize_t i, j
    cdef double d, s
    for i in range(n1):
        for j in range(n2):
            d = a1[i] - a2[j]
            s = sin(pi_over_period * d)
            out[i, j] = theta2 * exp(-fabs(d) * inv_le - s * s * inv_lp2)
    return out


def rk4_path(a_hat, forcing, b_meal, rates, int is_row, int is_col,
             double is_coeff, double x_basal_col, kis, double h, x0):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.ascontiguousarray(a_hat, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.ascontiguousarray(forcing, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bm = np.ascontiguousarray(b_meal, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.ascontiguousarray(rates, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] k = np.ascontiguousarray(kis, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.array(x0, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t nsub = (k.shape[0] - 1) // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] k1 = np.empty(n), k2 = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] k3 = np.empty(n), k4 = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xs = np.empty(n)
    cdef Py_ssize_t i, j, m, step
    cdef double acc, h6 = h / 6.0

    for step in range(nsub):
        m = 2 * step
        _deriv(A, f, bm, r[step], is_row, is_col, is_coeff, x_basal_col, k[m], x, k1, n)
        for i in range(n):
            xs[i] = x[i] + 0.5 * h * k1[i]
        _deriv(A, f, bm, r[step], is_row, is_col, is_coeff, x_basal_col, k[m + 1], xs, k2, n)
        for i in range(n):
            xs[i] = x[i] + 0.5 * h * k2[i]
        _deriv(A, f, bm, r[step], is_row, is_col, is_coeff, x_basal_col, k[m + 1], xs, k3, n)
        for i in range(n):
            xs[i] = x[i] + h * k3[i]
        _deriv(A, f, bm, r[step], is_row, is_col, is_coeff, x_basal_col, k[m + 2], xs, k4, n)
        for i in range(n):
            x[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return x


cdef inline void _deriv(cnp.ndarray[cnp.float64_t, ndim=2] A,
                        cnp.ndarray[cnp.float64_t, ndim=1] f,
                        cnp.ndarray[cnp.float64_t, ndim=1] bm,
                        double rate, int is_row, int is_col, double is_coeff,
                        double x_basal_col, double k_is,
                        cnp.ndarray[cnp.float64_t, ndim=1] x,
                        cnp.ndarray[cnp.float64_t, ndim=1] out,
                        Py_ssize_t n):
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = f[i] + bm[i] * rate
        for j in range(n):
            acc += A[i, j] * x[j]
        out[i] = acc
    out[is_row] += is_coeff * (k_is - 1.0) * (x[is_col] + x_basal_col)
