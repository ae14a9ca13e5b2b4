"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is used.  Set ``FREQCERT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FREQCERT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

knn_select = _impl.knn_select
weighted_sample = _impl.weighted_sample

__all__ = ["BACKEND", "knn_select", "weighted_sample"]
