# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled lag-2 / deletion-1 run loop."""

cimport numpy as cnp
import numpy as np

cnp.import_array()

cdef enum:
    OK = 0
    NO_RULE = 1
    TOO_SHORT = 2


cdef inline Py_ssize_t _find(const cnp.int64_t[::1] keys, cnp.int64_t key) nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0] - 1, mid
    while lo <= hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        elif keys[mid] > key:
            hi = mid - 1
        else:
            return mid
    return -1


def run_stream(const cnp.int64_t[::1] keys,
               const cnp.int32_t[:, ::1] rhs,
               const cnp.int32_t[::1] rhs_len,
               cnp.int64_t n_symbols,
               cnp.int32_t[::1] stream,
               Py_ssize_t start,
               Py_ssize_t length,
               Py_ssize_t max_steps,
               cnp.int32_t[::1] lengths):
    cdef Py_ssize_t pos = start, end = start + length, done = 0, idx, j, n
    cdef int code = OK
    with nogil:
        while done < max_steps:
            if end - pos < 2:
                code = TOO_SHORT
                break
            idx = _find(keys, stream[pos] * n_symbols + stream[pos + 1])
            if idx < 0:
                code = NO_RULE
                break
            n = rhs_len[idx]
            for j in range(n):
                stream[end + j] = rhs[idx, j]
            end += n
            pos += 1
            lengths[done] = <cnp.int32_t>(end - pos)
            done += 1
    return done, end - pos, code
