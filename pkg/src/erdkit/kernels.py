"""Kernel dispatch.

The compiled module is used when importable; set ``ERDKIT_PURE=1`` to force the
numpy fallback. ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("ERDKIT_PURE"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def available_backends():
    names = {"python": _pykernels}
    try:
        from . import _ckernels
        names["cython"] = _ckernels
    except ImportError:
        pass
    return names


def _prep(indptr, indices, data):
    return (np.ascontiguousarray(indptr, dtype=np.int64),
            np.ascontiguousarray(indices, dtype=np.int32),
            np.ascontiguousarray(data, dtype=np.float64))


def csr_matvec(indptr, indices, data, w, impl=None):
    """Row-wise dot products ``X @ w`` for a CSR matrix given by its three arrays."""
    impl = impl or _impl
    indptr, indices, data = _prep(indptr, indices, data)
    return impl.csr_matvec(indptr, indices, data, np.ascontiguousarray(w, dtype=np.float64))


def csr_rmatvec(indptr, indices, data, coef, n_cols, impl=None):
    """``X.T @ coef``; accumulation order is row-major and fixed."""
    impl = impl or _impl
    indptr, indices, data = _prep(indptr, indices, data)
    return impl.csr_rmatvec(indptr, indices, data,
                            np.ascontiguousarray(coef, dtype=np.float64), int(n_cols))


def sigmoid(z, impl=None):
    impl = impl or _impl
    return impl.sigmoid(np.ascontiguousarray(z, dtype=np.float64))


def softplus(z, impl=None):
    impl = impl or _impl
    return impl.softplus(np.ascontiguousarray(z, dtype=np.float64))
