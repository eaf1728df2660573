"""Incidence structures for the user-side and item-side hypergraphs.

On the user side nodes are users and each item is a hyperedge over the users
that interacted with it; the item side is the transpose construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import kernels
from .data import InteractionDataset

log = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix of 64-bit reals with no stored zeros."""

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        return len(self.values)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        return cls.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=shape))

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets),
                             shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def validate(self) -> None:
        ro = self.row_offsets
        if len(ro) != self.num_rows + 1 or ro[0] != 0 or ro[-1] != self.nnz:
            raise ValueError("bad row_offsets length or endpoints")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets not monotone")
        ci = self.col_indices
        if len(ci) and (ci.min() < 0 or ci.max() >= self.num_cols):
            raise ValueError("column index out of range")
        for r in range(self.num_rows):
            seg = ci[ro[r]:ro[r + 1]]
            if np.any(np.diff(seg) <= 0):
                raise ValueError(f"row {r}: column indices not strictly increasing")
        if np.any(self.values == 0):
            raise ValueError("explicit zero stored")

    def matmul(self, x: np.ndarray) -> np.ndarray:
        """``self @ x`` for a dense 2-D ``x``."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.num_cols:
            raise ShapeError(f"sparse {self.shape} @ dense {x.shape}")
        return kernels.csr_matmul(self.row_offsets, self.col_indices, self.values,
                                  x, self.num_rows)

    def rmatmul_t(self, x: np.ndarray) -> np.ndarray:
        """``self.T @ x`` without materializing the transpose."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.num_rows:
            raise ShapeError(f"sparse.T {self.shape[::-1]} @ dense {x.shape}")
        return kernels.csr_t_matmul(self.row_offsets, self.col_indices, self.values,
                                    x, self.num_cols)

    def dump_coo(self, path) -> None:
        """Write ``row col value`` lines in row-major order."""
        with open(path, "w", encoding="utf-8") as fh:
            for r in range(self.num_rows):
                for p in range(self.row_offsets[r], self.row_offsets[r + 1]):
                    fh.write(f"{r} {self.col_indices[p]} {float(self.values[p])!r}\n")


class Side(str, Enum):
    USER = "user_side"
    ITEM = "item_side"


@dataclass(frozen=True, eq=False)
class HypergraphView:
    """Binary incidence ``H`` (nodes x hyperedges) over non-isolated entities.

    ``node_ids``/``edge_ids`` map compact rows/columns of ``H`` back to
    dataset ids; ``num_node_ids``/``num_edge_ids`` are the full id ranges.
    """

    H: SparseMatrix
    node_degrees: np.ndarray
    edge_degrees: np.ndarray
    side: Side
    node_ids: np.ndarray
    edge_ids: np.ndarray
    num_node_ids: int
    num_edge_ids: int

    @property
    def num_nodes(self):
        return self.H.num_rows

    @property
    def num_edges(self):
        return self.H.num_cols

    @classmethod
    def from_incidence(cls, H, side=Side.USER) -> "HypergraphView":
        """View over an arbitrary 0/1 incidence (dense or sparse); isolated rows/cols dropped."""
        m = sp.csr_matrix(H, dtype=np.float64)
        m.data[:] = 1.0
        rows, cols = m.nonzero()
        return _make_view(rows, cols, m.shape[0], m.shape[1], Side(side))

    def full_operators(self) -> tuple[SparseMatrix, SparseMatrix]:
        """Mean-aggregation matrices lifted to the full id ranges.

        Returns ``(to_edge, to_node)`` with shapes ``(num_edge_ids, num_node_ids)``
        and ``(num_node_ids, num_edge_ids)``; dropped ids get empty rows.
        """
        coo = self.H.to_scipy().tocoo()
        r = self.node_ids[coo.row]
        c = self.edge_ids[coo.col]
        to_edge = SparseMatrix.from_coo(c, r, 1.0 / self.edge_degrees[coo.col],
                                        (self.num_edge_ids, self.num_node_ids))
        to_node = SparseMatrix.from_coo(r, c, 1.0 / self.node_degrees[coo.row],
                                        (self.num_node_ids, self.num_edge_ids))
        return to_edge, to_node


def _make_view(rows, cols, n_nodes, n_edges, side) -> HypergraphView:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    node_ids = np.unique(rows)
    edge_ids = np.unique(cols)
    dropped_nodes = n_nodes - len(node_ids)
    dropped_edges = n_edges - len(edge_ids)
    if dropped_nodes or dropped_edges:
        log.warning("%s: dropped %d isolated nodes and %d empty hyperedges",
                    side.value, dropped_nodes, dropped_edges)
    r = np.searchsorted(node_ids, rows)
    c = np.searchsorted(edge_ids, cols)
    H = SparseMatrix.from_coo(r, c, np.ones(len(r)), (len(node_ids), len(edge_ids)))
    # duplicates collapse to one
    H = SparseMatrix(H.num_rows, H.num_cols, H.row_offsets, H.col_indices,
                     np.ones(H.nnz))
    hs = H.to_scipy()
    node_deg = np.asarray(hs.sum(axis=1)).ravel()
    edge_deg = np.asarray(hs.sum(axis=0)).ravel()
    return HypergraphView(H, _frozen(node_deg, np.float64), _frozen(edge_deg, np.float64),
                          side, _frozen(node_ids, np.int64), _frozen(edge_ids, np.int64),
                          int(n_nodes), int(n_edges))


def build_views(ds: InteractionDataset) -> tuple[HypergraphView, HypergraphView]:
    """User-side (users x items) and item-side (items x users) views of train."""
    if len(ds.train) == 0:
        raise ValueError("train split is empty")
    u, i = ds.train[:, 0], ds.train[:, 1]
    user_side = _make_view(u, i, ds.num_users, ds.num_items, Side.USER)
    item_side = _make_view(i, u, ds.num_items, ds.num_users, Side.ITEM)
    return user_side, item_side


def node_to_edge(view: HypergraphView, X: np.ndarray) -> np.ndarray:
    """Mean of member-node features per hyperedge: ``D_e^-1 H^T X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != view.num_nodes:
        raise ShapeError(f"expected {view.num_nodes} node rows, got {X.shape}")
    return view.H.rmatmul_t(X) / view.edge_degrees[:, None]


def edge_to_node(view: HypergraphView, Xe: np.ndarray) -> np.ndarray:
    """Mean of incident-hyperedge features per node: ``D_v^-1 H Xe``."""
    Xe = np.asarray(Xe, dtype=np.float64)
    if Xe.ndim != 2 or Xe.shape[0] != view.num_edges:
        raise ShapeError(f"expected {view.num_edges} hyperedge rows, got {Xe.shape}")
    return view.H.matmul(Xe) / view.node_degrees[:, None]


def normalized_laplacian(view: HypergraphView) -> SparseMatrix:
    """``I - Dv^-1/2 H De^-1 H^T Dv^-1/2`` with unit hyperedge weights."""
    if np.any(view.node_degrees <= 0) or np.any(view.edge_degrees <= 0):
        raise FloatingPointError("hypergraph view has a zero degree")
    H = view.H.to_scipy()
    B = sp.diags(view.node_degrees ** -0.5) @ H @ sp.diags(view.edge_degrees ** -0.5)
    A = (B @ B.T).tocsr()
    L = sp.identity(view.num_nodes, format="csr") - A
    L = (L + L.T) * 0.5
    return SparseMatrix.from_scipy(L)
