# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse linear-model kernels; see _pykernels.py for contracts."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


def csr_logits(
    cnp.int64_t[::1] indptr,
    cnp.int32_t[::1] indices,
    double[:, ::1] weights,
    double[::1] intercept,
):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t n_labels = weights.shape[1]
    out_arr = np.empty((n, n_labels), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c
    cdef cnp.int32_t f
    for i in range(n):
        for c in range(n_labels):
            out[i, c] = intercept[c]
        for p in range(indptr[i], indptr[i + 1]):
            f = indices[p]
            for c in range(n_labels):
                out[i, c] += weights[f, c]
    return out_arr


def csr_grad(
    cnp.int64_t[::1] indptr,
    cnp.int32_t[::1] indices,
    double[:, ::1] dprobs,
    Py_ssize_t dim,
):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t n_labels = dprobs.shape[1]
    gw_arr = np.zeros((dim, n_labels), dtype=np.float64)
    gb_arr = np.zeros(n_labels, dtype=np.float64)
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, p, c
    cdef cnp.int32_t f
    for i in range(n):
        for c in range(n_labels):
            gb[c] += dprobs[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            f = indices[p]
            for c in range(n_labels):
                gw[f, c] += dprobs[i, c]
    return gw_arr, gb_arr


def csr_step(
    cnp.int64_t[::1] indptr,
    cnp.int32_t[::1] indices,
    double[:, ::1] weights,
    double[::1] intercept,
    double[:, ::1] dprobs,
    double scale,
):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t n_labels = weights.shape[1]
    cdef Py_ssize_t i, p, c
    cdef cnp.int32_t f
    for i in range(n):
        for c in range(n_labels):
            intercept[c] -= scale * dprobs[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            f = indices[p]
            for c in range(n_labels):
                weights[f, c] -= scale * dprobs[i, c]
