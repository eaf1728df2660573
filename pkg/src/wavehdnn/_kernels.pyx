# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: CSR products and masked top-K selection.

Every routine here has a numpy twin in ``_kernels_py`` with the same
signature; ``wavehdnn.kernels`` picks one at import.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_matmul(const cnp.int64_t[::1] indptr,
               const cnp.int64_t[::1] indices,
               const double[::1] data,
               const double[:, ::1] x,
               Py_ssize_t n_rows):
    """Return ``A @ x`` for ``A`` in CSR form."""
    cdef Py_ssize_t d = x.shape[1]
    out = np.zeros((n_rows, d), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t r, p, c, k
    cdef double v
    with nogil:
        for r in range(n_rows):
            for p in range(indptr[r], indptr[r + 1]):
                c = indices[p]
                v = data[p]
                for k in range(d):
                    y[r, k] += v * x[c, k]
    return out


def csr_t_matmul(const cnp.int64_t[::1] indptr,
                 const cnp.int64_t[::1] indices,
                 const double[::1] data,
                 const double[:, ::1] x,
                 Py_ssize_t n_cols):
    """Return ``A.T @ x`` without forming the transpose."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out = np.zeros((n_cols, d), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t r, p, c, k
    cdef double v
    with nogil:
        for r in range(n_rows):
            for p in range(indptr[r], indptr[r + 1]):
                c = indices[p]
                v = data[p]
                for k in range(d):
                    y[c, k] += v * x[r, k]
    return out


def topk_masked(const double[:, ::1] scores,
                const cnp.int64_t[::1] mask_indptr,
                const cnp.int64_t[::1] mask_indices,
                Py_ssize_t k):
    """Top-``k`` column ids per row, skipping masked ids.

    Order is descending score with ties broken by ascending id. Mask ids
    per row must be sorted. Rows with fewer than ``k`` candidates are
    padded with -1.
    """
    cdef Py_ssize_t n_rows = scores.shape[0]
    cdef Py_ssize_t n = scores.shape[1]
    out = np.full((n_rows, k), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] res = out
    best = np.empty(k, dtype=np.float64)
    cdef double[::1] best_s = best
    cdef Py_ssize_t r, j, m, mend, filled, pos, q
    cdef double s
    with nogil:
        for r in range(n_rows):
            filled = 0
            m = mask_indptr[r]
            mend = mask_indptr[r + 1]
            for j in range(n):
                while m < mend and mask_indices[m] < j:
                    m += 1
                if m < mend and mask_indices[m] == j:
                    continue
                s = scores[r, j]
                # ids arrive in ascending order, so an equal score never displaces
                if filled == k and not (s > best_s[k - 1]):
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and best_s[pos - 1] < s:
                    pos -= 1
                q = filled if filled < k else k - 1
                while q > pos:
                    best_s[q] = best_s[q - 1]
                    res[r, q] = res[r, q - 1]
                    q -= 1
                best_s[pos] = s
                res[r, pos] = j
                if filled < k:
                    filled += 1
    return out
