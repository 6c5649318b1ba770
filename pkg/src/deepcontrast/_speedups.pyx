# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: union-find segment merging and the CRF
appearance-kernel message pass.  Pure-python fallbacks with identical
signatures live in _kernels_py; the active backend is chosen in kernels.py.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef long _find(long[:] parent, long x) nogil:
    cdef long root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def felz_merge(long[:] eu, long[:] ev, double[:] ew, long n, double k,
               long min_size):
    """Kruskal-style merging on edges sorted by ascending weight.

    Returns the root id of every vertex after threshold merging and the
    min-size cleanup pass.
    """
    parent_arr = np.arange(n, dtype=np.int64)
    size_arr = np.ones(n, dtype=np.int64)
    thresh_arr = np.full(n, k, dtype=np.float64)
    cdef long[:] parent = parent_arr
    cdef long[:] size = size_arr
    cdef double[:] thresh = thresh_arr
    cdef Py_ssize_t m = eu.shape[0]
    cdef Py_ssize_t i
    cdef long a, b
    cdef double w
    with nogil:
        for i in range(m):
            a = _find(parent, eu[i])
            b = _find(parent, ev[i])
            if a == b:
                continue
            w = ew[i]
            if w <= thresh[a] and w <= thresh[b]:
                parent[a] = b
                size[b] += size[a]
                thresh[b] = w + k / size[b]
        for i in range(m):
            a = _find(parent, eu[i])
            b = _find(parent, ev[i])
            if a != b and (size[a] < min_size or size[b] < min_size):
                parent[a] = b
                size[b] += size[a]
        for i in range(n):
            _find(parent, i)
    return np.asarray(parent_arr)


def appearance_filter(double[:, :] q, double[:, :, :] feats, long radius):
    """out[i] = sum over j != i in the (2r+1)^2 window of
    exp(-||f_i - f_j||^2) * q[j].  Feature channels are pre-scaled by
    1/(sqrt(2) sigma), so the Gaussian kernel is exp of the plain squared
    distance.
    """
    cdef Py_ssize_t h = q.shape[0]
    cdef Py_ssize_t w = q.shape[1]
    cdef Py_ssize_t nf = feats.shape[2]
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t y, x, yy, xx, y0, y1, x0, x1, f
    cdef double acc, d2, diff
    with nogil:
        for y in range(h):
            y0 = y - radius if y - radius > 0 else 0
            y1 = y + radius + 1 if y + radius + 1 < h else h
            for x in range(w):
                x0 = x - radius if x - radius > 0 else 0
                x1 = x + radius + 1 if x + radius + 1 < w else w
                acc = 0.0
                for yy in range(y0, y1):
                    for xx in range(x0, x1):
                        if yy == y and xx == x:
                            continue
                        d2 = 0.0
                        for f in range(nf):
                            diff = feats[y, x, f] - feats[yy, xx, f]
                            d2 += diff * diff
                        acc += exp(-d2) * q[yy, xx]
                out[y, x] = acc
    return out_arr
