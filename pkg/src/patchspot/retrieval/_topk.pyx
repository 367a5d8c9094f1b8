# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bounded top-K selection.

Keeps a K-element binary heap ordered worst-first under the total order
(score descending, index ascending), so a full pass costs O(n log K)
comparisons and ties always resolve to the lower index. The NumPy fallback
in ``_topk_fallback`` implements the identical contract.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef inline bint _worse(double s1, idx_t i1, double s2, idx_t i2) noexcept nogil:
    """True when (s1, i1) ranks below (s2, i2): lower score, or tied with higher index."""
    return s1 < s2 or (s1 == s2 and i1 > i2)


cdef inline void _sift_down(double* hs, idx_t* hi, Py_ssize_t pos, Py_ssize_t size) noexcept nogil:
    cdef Py_ssize_t child
    cdef double ts
    cdef idx_t ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            return
        if child + 1 < size and _worse(hs[child + 1], hi[child + 1], hs[child], hi[child]):
            child += 1
        if _worse(hs[child], hi[child], hs[pos], hi[pos]):
            ts = hs[pos]; hs[pos] = hs[child]; hs[child] = ts
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            return


cdef void _select(const double* scores, Py_ssize_t n, Py_ssize_t k,
                  double* hs, idx_t* hi, idx_t* out) noexcept nogil:
    cdef Py_ssize_t i, pos, parent, size = 0
    cdef double s, ts
    cdef idx_t ti
    for i in range(n):
        s = scores[i]
        if size < k:
            pos = size
            hs[pos] = s
            hi[pos] = <idx_t> i
            size += 1
            while pos > 0:
                parent = (pos - 1) >> 1
                if _worse(hs[pos], hi[pos], hs[parent], hi[parent]):
                    ts = hs[pos]; hs[pos] = hs[parent]; hs[parent] = ts
                    ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
                    pos = parent
                else:
                    break
        elif _worse(hs[0], hi[0], s, <idx_t> i):
            hs[0] = s
            hi[0] = <idx_t> i
            _sift_down(hs, hi, 0, k)
    # Pop worst-first, filling the output from the back: best ends up first.
    while size > 0:
        out[size - 1] = hi[0]
        size -= 1
        hs[0] = hs[size]
        hi[0] = hi[size]
        _sift_down(hs, hi, 0, size)


def topk_select(cnp.ndarray[cnp.float64_t, ndim=1] scores not None, Py_ssize_t k):
    """Indices of the k largest scores, sorted by (score desc, index asc)."""
    cdef Py_ssize_t n = scores.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside [1, {n}]")
    scores = np.ascontiguousarray(scores)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hs = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[idx_t, ndim=1] hi = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] out = np.empty(k, dtype=np.int64)
    with nogil:
        _select(&scores[0], n, k, &hs[0], &hi[0], &out[0])
    return out


def topk_select_batch(cnp.ndarray[cnp.float64_t, ndim=2] scores not None, Py_ssize_t k):
    """Row-wise ``topk_select`` over an m x n score matrix: returns m x k indices."""
    cdef Py_ssize_t m = scores.shape[0]
    cdef Py_ssize_t n = scores.shape[1]
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside [1, {n}]")
    scores = np.ascontiguousarray(scores)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hs = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[idx_t, ndim=1] hi = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=2] out = np.empty((m, k), dtype=np.int64)
    cdef Py_ssize_t row
    if m == 0:
        return out
    with nogil:
        for row in range(m):
            _select(&scores[row, 0], n, k, &hs[0], &hi[0], &out[row, 0])
    return out
