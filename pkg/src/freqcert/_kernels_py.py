"""Pure-Python/numpy versions of the compiled kernels.

Results are bit-identical to ``_kernels.pyx``; the test suite checks this
whenever the extension is importable.
"""
import numpy as np


def knn_select(d2, k):
    """Indices of the ``k`` nearest neighbours per row, ties to the lower index."""
    d2 = np.asarray(d2, dtype=np.float64)
    n = d2.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        order = np.argsort(d2[i], kind="stable")
        out[i] = order[order != i][:k]
    return out


def weighted_sample(weights, n, uniforms):
    """Sequential draw-and-renormalize sampling without replacement."""
    w = np.array(weights, dtype=np.float64, copy=True)
    out = np.empty(n, dtype=np.int64)
    for t in range(n):
        cum = np.cumsum(w)
        positive = np.flatnonzero(w > 0.0)
        total = cum[-1]
        if positive.size == 0 or not total > 0.0:
            raise ValueError("no remaining weight")
        pick = int(np.searchsorted(cum, uniforms[t] * total, side="right"))
        if pick >= w.size:
            pick = int(positive[-1])
        out[t] = pick
        w[pick] = 0.0
    return out
