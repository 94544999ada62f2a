# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels used by the trainer and batch scorer."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()


def csr_matvec(const long long[::1] indptr, const int[::1] indices,
               const double[::1] data, const double[::1] w):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n_rows, dtype=np.float64)
    cdef double[::1] z = out
    cdef Py_ssize_t r, j
    cdef double acc
    with nogil:
        for r in range(n_rows):
            acc = 0.0
            for j in range(indptr[r], indptr[r + 1]):
                acc += data[j] * w[indices[j]]
            z[r] = acc
    return out


def csr_rmatvec(const long long[::1] indptr, const int[::1] indices,
                const double[::1] data, const double[::1] coef, Py_ssize_t n_cols):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n_cols, dtype=np.float64)
    cdef double[::1] g = out
    cdef Py_ssize_t r, j
    cdef double c
    with nogil:
        for r in range(n_rows):
            c = coef[r]
            for j in range(indptr[r], indptr[r + 1]):
                g[indices[j]] += data[j] * c
    return out


def sigmoid(const double[::1] z):
    cdef Py_ssize_t n = z.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] p = out
    cdef double e
    with nogil:
        for i in range(n):
            if z[i] >= 0:
                p[i] = 1.0 / (1.0 + exp(-z[i]))
            else:
                e = exp(z[i])
                p[i] = e / (1.0 + e)
    return out


def softplus(const double[::1] z):
    cdef Py_ssize_t n = z.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] s = out
    with nogil:
        for i in range(n):
            if z[i] > 0:
                s[i] = z[i] + log1p(exp(-z[i]))
            else:
                s[i] = log1p(exp(z[i]))
    return out
