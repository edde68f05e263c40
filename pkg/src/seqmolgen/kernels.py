"""Backend selection for the hot kernels.

The Cython extension is used when it was built; otherwise the numpy
fallback is used. Setting ``SEQMOLGEN_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("SEQMOLGEN_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback


def available_backends():
    backends = {"python": _fallback}
    try:
        from . import _kernels

        backends["compiled"] = _kernels
    except ImportError:
        pass
    return backends


def aggregate(gather, scatter, coef, x, n_out, impl=None):
    """Weighted scatter-add of rows of ``x``: out[scatter] += coef * x[gather]."""
    impl = impl or _impl
    return impl.aggregate(
        np.ascontiguousarray(gather, dtype=np.intp),
        np.ascontiguousarray(scatter, dtype=np.intp),
        np.ascontiguousarray(coef, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64),
        int(n_out),
    )


def betweenness_csr(indptr, indices, impl=None):
    impl = impl or _impl
    return np.asarray(
        impl.betweenness(
            np.ascontiguousarray(indptr, dtype=np.intp),
            np.ascontiguousarray(indices, dtype=np.intp),
        )
    )
