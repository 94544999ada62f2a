"""Numpy implementations of the CSR kernels (fallback when the extension is absent)."""
import numpy as np


def _row_ids(indptr):
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def csr_matvec(indptr, indices, data, w):
    n_rows = len(indptr) - 1
    return np.bincount(_row_ids(indptr), weights=data * w[indices], minlength=n_rows).astype(np.float64)


def csr_rmatvec(indptr, indices, data, coef, n_cols):
    return np.bincount(indices, weights=data * coef[_row_ids(indptr)], minlength=n_cols).astype(np.float64)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(z):
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))
