# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: QP ratio scan and presolve row filtering.

Single-pass loops over the constraint rows; the numpy fallback in
campc._kernels_py implements identical semantics.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def ratio_scan(double[:, ::1] A, double[::1] d, double[::1] s,
               cnp.uint8_t[::1] in_work, double tol):
    """Largest feasible step toward an equality-QP target.

    Returns (alpha, blocking_row, A @ d) with alpha = min(1, s_i / (A d)_i)
    over rows outside the working set with (A d)_i > tol; blocking_row is
    the first row attaining the minimum (-1 when alpha == 1).
    """
    cdef Py_ssize_t q = A.shape[0], m = A.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] Ad_arr = np.empty(q, dtype=np.float64)
    cdef double[::1] Ad = Ad_arr
    cdef Py_ssize_t i, j, blk = -1
    cdef double acc, r, alpha = 1.0
    for i in range(q):
        acc = 0.0
        for j in range(m):
            acc += A[i, j] * d[j]
        Ad[i] = acc
        if in_work[i] == 0 and acc > tol:
            r = s[i] / acc
            if r < alpha:
                alpha = r
                blk = i
    if blk < 0:
        return 1.0, -1, Ad_arr
    return alpha, blk, Ad_arr


def retained_rows(double[::1] fwd_hi, cnp.uint8_t[::1] bwd_ok,
                  double[::1] ls_slack, double[::1] rho_w, double[::1] b):
    """Indices of constraint rows that no redundancy test certifies."""
    cdef Py_ssize_t n = fwd_hi.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t i, k = 0
    for i in range(n):
        if fwd_hi[i] <= b[i]:
            continue
        if bwd_ok[i] != 0:
            continue
        if rho_w[i] <= ls_slack[i]:
            continue
        o[k] = i
        k += 1
    return out[:k].copy()
