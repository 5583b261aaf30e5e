# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contracts and arithmetic order as _pykernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

name = "cython"


def sq_l2(const double[:, ::1] queries, const double[:, ::1] keys_t):
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t d = queries.shape[1]
    cdef Py_ssize_t n = keys_t.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, i, j
    cdef double q, diff
    cdef double* acc
    cdef const double* krow
    with nogil:
        for r in range(m):
            acc = &out[r, 0]
            for i in range(d):
                q = queries[r, i]
                krow = &keys_t[i, 0]
                for j in range(n):
                    diff = q - krow[j]
                    acc[j] = acc[j] + diff * diff
    return out_arr


def topk_rows(const double[:, ::1] dists, Py_ssize_t k, const cnp.int64_t[::1] exclude):
    cdef Py_ssize_t m = dists.shape[0]
    cdef Py_ssize_t n = dists.shape[1]
    cdef Py_ssize_t kk = k if k < n else n
    if kk < 0:
        kk = 0
    idx_arr = np.full((m, kk), -1, dtype=np.int64)
    val_arr = np.full((m, kk), np.inf, dtype=np.float64)
    if kk == 0:
        return idx_arr, val_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] val = val_arr
    cdef Py_ssize_t r, j, p, filled
    cdef cnp.int64_t ex
    cdef double v
    with nogil:
        for r in range(m):
            ex = exclude[r]
            filled = 0
            for j in range(n):
                if j == ex:
                    continue
                v = dists[r, j]
                if filled == kk and not (v < val[r, kk - 1]):
                    continue
                # columns arrive in increasing order, so equal values keep
                # their earlier position
                p = filled if filled < kk else kk - 1
                while p > 0 and v < val[r, p - 1]:
                    val[r, p] = val[r, p - 1]
                    idx[r, p] = idx[r, p - 1]
                    p -= 1
                val[r, p] = v
                idx[r, p] = j
                if filled < kk:
                    filled += 1
    return idx_arr, val_arr


def segment_sum(const double[:, ::1] values, const cnp.int64_t[::1] segments, Py_ssize_t num_segments):
    cdef Py_ssize_t e = values.shape[0]
    cdef Py_ssize_t f = values.shape[1]
    out_arr = np.zeros((num_segments, f), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, s
    with nogil:
        for r in range(e):
            s = segments[r]
            for c in range(f):
                out[s, c] = out[s, c] + values[r, c]
    return out_arr


def segment_max(const double[:, ::1] values, const cnp.int64_t[::1] segments, Py_ssize_t num_segments):
    cdef Py_ssize_t e = values.shape[0]
    cdef Py_ssize_t f = values.shape[1]
    out_arr = np.full((num_segments, f), -np.inf, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, s
    with nogil:
        for r in range(e):
            s = segments[r]
            for c in range(f):
                if values[r, c] > out[s, c]:
                    out[s, c] = values[r, c]
    return out_arr
