# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: LCS length and boolean sliding-window co-occurrence counts."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def lcs_length(a, b):
    cdef cnp.int64_t[::1] x = np.ascontiguousarray(a, dtype=np.int64)
    cdef cnp.int64_t[::1] y = np.ascontiguousarray(b, dtype=np.int64)
    if x.shape[0] < y.shape[0]:
        x, y = y, x
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], i, j
    if m == 0:
        return 0
    cdef cnp.int64_t[::1] prev = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] cur = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] tmp
    for i in range(n):
        cur[0] = 0
        for j in range(1, m + 1):
            if x[i] == y[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif cur[j - 1] > prev[j]:
                cur[j] = cur[j - 1]
            else:
                cur[j] = prev[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def window_cooccurrence(doc, Py_ssize_t n_words, Py_ssize_t window):
    if window < 1:
        raise ValueError("window must be >= 1")
    cdef cnp.int64_t[::1] d = np.ascontiguousarray(doc, dtype=np.int64)
    occ_arr = np.zeros(n_words, dtype=np.int64)
    co_arr = np.zeros((n_words, n_words), dtype=np.int64)
    cdef cnp.int64_t[::1] occ = occ_arr
    cdef cnp.int64_t[:, ::1] co = co_arr
    cdef Py_ssize_t length = d.shape[0]
    if length == 0:
        return 0, occ_arr, co_arr
    cdef Py_ssize_t span = window if window < length else length
    cdef cnp.int64_t[::1] inside = np.zeros(n_words, dtype=np.int64)
    cdef cnp.int64_t[::1] present = np.zeros(n_words, dtype=np.int64)
    cdef cnp.int64_t[::1] pos = np.zeros(n_words, dtype=np.int64)
    cdef Py_ssize_t n_windows = length - span + 1
    cdef Py_ssize_t start, k, a, b, n_present = 0
    cdef cnp.int64_t t, last, p, wa
    for k in range(span):
        t = d[k]
        if t >= 0:
            inside[t] += 1
            if inside[t] == 1:
                pos[t] = n_present
                present[n_present] = t
                n_present += 1
    for start in range(n_windows):
        if start:
            t = d[start - 1]
            if t >= 0:
                inside[t] -= 1
                if inside[t] == 0:
                    p = pos[t]
                    last = present[n_present - 1]
                    present[p] = last
                    pos[last] = p
                    n_present -= 1
            t = d[start + span - 1]
            if t >= 0:
                inside[t] += 1
                if inside[t] == 1:
                    pos[t] = n_present
                    present[n_present] = t
                    n_present += 1
        for a in range(n_present):
            wa = present[a]
            occ[wa] += 1
            for b in range(n_present):
                co[wa, present[b]] += 1
    return n_windows, occ_arr, co_arr
