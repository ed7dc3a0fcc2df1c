# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled scoring kernels; mirrors _kernels_py accumulation order."""
import numpy as np

cimport numpy as cnp


def cosine_scores(cnp.float64_t[:, ::1] matrix, cnp.float64_t[::1] query):
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    out = np.zeros(n)
    cdef cnp.float64_t[::1] ov = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += matrix[i, j] * query[j]
        ov[i] = acc
    return out


def bm25_scores(
    cnp.int64_t[::1] doc_ids,
    cnp.float64_t[::1] tfs,
    cnp.int64_t[::1] offsets,
    cnp.float64_t[::1] idf,
    cnp.float64_t[::1] doc_len,
    double avgdl,
    double k1,
    double b,
    Py_ssize_t n_docs,
):
    out = np.zeros(n_docs)
    cdef cnp.float64_t[::1] scores = out
    cdef Py_ssize_t t, p, d
    cdef double tf, norm
    cdef Py_ssize_t n_terms = idf.shape[0]
    for t in range(n_terms):
        for p in range(offsets[t], offsets[t + 1]):
            d = doc_ids[p]
            tf = tfs[p]
            norm = k1 * (1.0 - b + b * doc_len[d] / avgdl)
            scores[d] += idf[t] * tf * (k1 + 1.0) / (tf + norm)
    return out
