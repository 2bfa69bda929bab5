# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled counting kernels; same signatures and results as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def element_counts(xs, Py_ssize_t n):
    cdef const cnp.int64_t[::1] x = np.ascontiguousarray(xs, dtype=np.int64)
    out = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] c = out
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        c[x[i]] += 1
    return out


def max_count(xs, Py_ssize_t n):
    cdef const cnp.int64_t[::1] x = np.ascontiguousarray(xs, dtype=np.int64)
    cdef cnp.int64_t[::1] c = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i
    cdef cnp.int64_t best = 0
    for i in range(x.shape[0]):
        c[x[i]] += 1
        if c[x[i]] > best:
            best = c[x[i]]
    return int(best)


def max_multiplicity(seeds, t, Py_ssize_t n):
    cdef const cnp.int64_t[::1] s = np.ascontiguousarray(seeds, dtype=np.int64)
    cdef const cnp.int64_t[::1] tt = np.ascontiguousarray(t, dtype=np.int64)
    cdef cnp.int64_t[::1] c = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i
    cdef cnp.int64_t best = 0
    for i in range(tt.shape[0]):
        c[tt[i]] += 1
    for i in range(s.shape[0]):
        if c[s[i]] > best:
            best = c[s[i]]
    return int(best)


def binned_collisions(seeds, bin_ids, Py_ssize_t nbins, t, t2, Py_ssize_t n):
    cdef const cnp.int64_t[::1] s = np.ascontiguousarray(seeds, dtype=np.int64)
    cdef const cnp.int64_t[::1] b = np.ascontiguousarray(bin_ids, dtype=np.int64)
    cdef const cnp.int64_t[::1] ta = np.ascontiguousarray(t, dtype=np.int64)
    cdef const cnp.int64_t[::1] tb = np.ascontiguousarray(t2, dtype=np.int64)
    cdef cnp.int64_t[::1] ct = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] ct2 = np.zeros(n, dtype=np.int64)
    pair_arr = np.zeros(nbins, dtype=np.int64)
    triple_arr = np.zeros(nbins, dtype=np.int64)
    cdef cnp.int64_t[::1] pair = pair_arr
    cdef cnp.int64_t[::1] triple = triple_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t a
    for i in range(ta.shape[0]):
        ct[ta[i]] += 1
    for i in range(tb.shape[0]):
        ct2[tb[i]] += 1
    for i in range(s.shape[0]):
        if b[i] < 0:
            continue
        a = ct[s[i]]
        pair[b[i]] += a
        triple[b[i]] += a * ct2[s[i]]
    return pair_arr, triple_arr


def tv_to_reference(counts, q, double size):
    cdef const cnp.float64_t[::1] c = np.ascontiguousarray(counts, dtype=np.float64)
    cdef const cnp.float64_t[::1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(c.shape[0]):
        acc += fabs(c[i] / size - qq[i])
    return 0.5 * acc


def tv_two_sample(c1, c2, double size1, double size2):
    cdef const cnp.float64_t[::1] a = np.ascontiguousarray(c1, dtype=np.float64)
    cdef const cnp.float64_t[::1] b = np.ascontiguousarray(c2, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(a.shape[0]):
        acc += fabs(a[i] / size1 - b[i] / size2)
    return 0.5 * acc
