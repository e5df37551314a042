# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled argmax-of-products kernel for batched grid decoding.

Semantics match kernels.best_joint_scores_numpy exactly: strict ">"
comparisons keep the first maximum, i.e. ties resolve to the lowest
keyword index and then the lowest box index.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def best_joint_scores(double[:, :, ::1] class_scores, double[:, :, ::1] confs):
    """(batch, cells, L) x (batch, cells, B) -> per-cell best (k, j, score)."""
    cdef Py_ssize_t n = class_scores.shape[0]
    cdef Py_ssize_t c = class_scores.shape[1]
    cdef Py_ssize_t l = class_scores.shape[2]
    cdef Py_ssize_t b = confs.shape[2]
    if confs.shape[0] != n or confs.shape[1] != c:
        raise ValueError("class_scores and confs disagree on batch/cell dims")

    k_out = np.empty((n, c), dtype=np.int64)
    j_out = np.empty((n, c), dtype=np.int64)
    s_out = np.empty((n, c), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] kv = k_out
    cdef cnp.int64_t[:, ::1] jv = j_out
    cdef double[:, ::1] sv = s_out

    cdef Py_ssize_t w, i, k, j, bk, bj
    cdef double best, ck, v
    for w in range(n):
        for i in range(c):
            best = -INFINITY
            bk = 0
            bj = 0
            for k in range(l):
                ck = class_scores[w, i, k]
                for j in range(b):
                    v = ck * confs[w, i, j]
                    if v > best:
                        best = v
                        bk = k
                        bj = j
            kv[w, i] = bk
            jv[w, i] = bj
            sv[w, i] = best
    return k_out, j_out, s_out
