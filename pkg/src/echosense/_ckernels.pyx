# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled streaming kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def envelope_follow(x, double alpha, double y0):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = out
    cdef double y = y0, v
    for i in range(n):
        v = xv[i]
        if v < 0.0:
            v = 0.0
        y = y + alpha * (v - y)
        yv[i] = y
    return out, y


def xor_integrate(rx, ref, double threshold, cnp.uint8_t[::1] ring, Py_ssize_t pos, Py_ssize_t count):
    cdef const double[::1] rv = np.ascontiguousarray(rx, dtype=np.float64)
    cdef const cnp.uint8_t[::1] fv = np.ascontiguousarray(ref, dtype=np.uint8)
    cdef Py_ssize_t n = rv.shape[0], w = ring.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef cnp.uint8_t bit
    cdef double inv_w = 1.0 / w
    for i in range(n):
        bit = (rv[i] > threshold) ^ (fv[i] != 0)
        count += bit - ring[pos]
        ring[pos] = bit
        pos += 1
        if pos == w:
            pos = 0
        ov[i] = count * inv_w
    return out, pos, count

