# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Both routines must stay bit-identical to their counterparts in
``_kernels_py``: same summation order, same comparison rules.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def knn_select(const double[:, ::1] d2, Py_ssize_t k):
    """Indices of the ``k`` nearest neighbours of every row of ``d2``.

    The diagonal is skipped.  Ordering is by (distance, index), so equal
    distances resolve to the smaller index.
    """
    cdef Py_ssize_t n = d2.shape[0]
    cdef Py_ssize_t i, j, pos, filled
    cdef double d
    out = np.empty((n, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] idx = out
    cdef double[::1] best = np.empty(k, dtype=np.float64)
    for i in range(n):
        filled = 0
        for j in range(n):
            if j == i:
                continue
            d = d2[i, j]
            if filled == k and d >= best[k - 1]:
                continue
            # insertion into the sorted prefix; strict < keeps earlier j first on ties
            pos = filled if filled < k else k - 1
            while pos > 0 and d < best[pos - 1]:
                if pos < k:
                    best[pos] = best[pos - 1]
                    idx[i, pos] = idx[i, pos - 1]
                pos -= 1
            best[pos] = d
            idx[i, pos] = j
            if filled < k:
                filled += 1
    return out


def weighted_sample(const double[::1] weights, Py_ssize_t n, const double[::1] uniforms):
    """Sequential draw-and-renormalize sampling without replacement.

    Draw ``t`` picks the first index whose running sum of the remaining
    weights exceeds ``uniforms[t] * total``.
    """
    cdef Py_ssize_t size = weights.shape[0]
    cdef Py_ssize_t t, j, pick, last
    cdef double total, target, acc
    cdef double[::1] w = np.array(weights, dtype=np.float64, copy=True)
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    for t in range(n):
        total = 0.0
        last = -1
        for j in range(size):
            total = total + w[j]
            if w[j] > 0.0:
                last = j
        if last < 0 or not total > 0.0:
            raise ValueError("no remaining weight")
        target = uniforms[t] * total
        acc = 0.0
        pick = last
        for j in range(size):
            acc = acc + w[j]
            if acc > target:
                pick = j
                break
        res[t] = pick
        w[pick] = 0.0
    return out
