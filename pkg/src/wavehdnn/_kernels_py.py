"""numpy implementations of the compiled kernels (same signatures)."""
import numpy as np
import scipy.sparse as sp


def csr_matmul(indptr, indices, data, x, n_rows):
    n_cols = x.shape[0]
    a = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))
    return np.ascontiguousarray(a @ x)


def csr_t_matmul(indptr, indices, data, x, n_cols):
    n_rows = len(indptr) - 1
    out = np.zeros((n_cols, x.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    # np.add.at is unbuffered and walks entries in order, like the C loop
    np.add.at(out, indices, data[:, None] * x[rows])
    return out


def topk_masked(scores, mask_indptr, mask_indices, k):
    n_rows, n = scores.shape
    out = np.full((n_rows, k), -1, dtype=np.int64)
    ids = np.arange(n)
    for r in range(n_rows):
        keep = np.ones(n, dtype=bool)
        keep[mask_indices[mask_indptr[r]:mask_indptr[r + 1]]] = False
        cand = ids[keep]
        order = np.lexsort((cand, -scores[r, cand]))[:k]
        out[r, : len(order)] = cand[order]
    return out
