"""Heat-kernel wavelet operators on a hypergraph Laplacian.

``forward`` applies the wavelet ``U exp(-s lam) U^T`` and ``inverse`` its
inverse ``U exp(+s lam) U^T``. Small graphs use a dense eigendecomposition;
larger ones a matrix-free Chebyshev expansion on ``2 L / lam_max - I``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .hypergraph import HypergraphView, ShapeError, SparseMatrix, normalized_laplacian

log = logging.getLogger(__name__)

DEFAULT_DENSE_LIMIT = 4096
FORWARD, INVERSE = "forward", "inverse"


class WaveletConfigError(ValueError):
    pass


class DenseLimitError(WaveletConfigError):
    pass


class SpectralNumericError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class WaveletOperator:
    mode: str
    scale: float
    dim: int
    # exact mode
    eigvecs: np.ndarray | None = None
    eigvals: np.ndarray | None = None
    # chebyshev mode
    laplacian: SparseMatrix | None = None
    lam_max: float | None = None
    coeffs_forward: np.ndarray | None = None
    coeffs_inverse: np.ndarray | None = None
    max_error_forward: float | None = None
    max_error_inverse: float | None = None

    @property
    def order(self):
        return None if self.coeffs_forward is None else len(self.coeffs_forward) - 1

    def matrix(self, direction=FORWARD) -> np.ndarray:
        """Dense materialization, for tests and small graphs only."""
        return apply(self, direction, np.eye(self.dim))


def exact_wavelet(L: SparseMatrix, s: float, dense_limit: int = DEFAULT_DENSE_LIMIT) -> WaveletOperator:
    if s < 0:
        raise WaveletConfigError(f"wavelet scale must be >= 0, got {s}")
    if L.num_rows != L.num_cols:
        raise ShapeError(f"Laplacian must be square, got {L.shape}")
    if L.num_rows > dense_limit:
        raise DenseLimitError(
            f"{L.num_rows} nodes exceeds the dense limit {dense_limit}; use chebyshev mode")
    try:
        lam, U = np.linalg.eigh(L.to_dense())
    except np.linalg.LinAlgError as exc:
        raise SpectralNumericError(f"eigendecomposition failed: {exc}") from exc
    lam = np.clip(lam, 0.0, None)
    log.info("exact wavelet: n=%d s=%g lam_max=%.6g", L.num_rows, s, lam.max(initial=0.0))
    return WaveletOperator("exact", float(s), L.num_rows, eigvecs=U, eigvals=lam)


def estimate_lam_max(L: SparseMatrix, iters: int = 1000, tol: float = 1e-10) -> float:
    """Largest eigenvalue by power iteration (unpadded)."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((L.num_rows, 1))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = L.matmul(x)
        new = float((x.T @ y)[0, 0])
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            lam = new
            break
        lam = new
    return lam


def chebyshev_coefficients(f, order: int, lam_max: float) -> np.ndarray:
    """Project ``f`` on ``[0, lam_max]`` onto T_0..T_order (2K+2 Gauss nodes)."""
    n = 2 * order + 2
    theta = np.pi * (np.arange(n) + 0.5) / n
    lam = (np.cos(theta) + 1.0) * lam_max / 2.0
    fv = f(lam)
    k = np.arange(order + 1)[:, None]
    return 2.0 / n * (np.cos(k * theta[None, :]) @ fv)


def chebyshev_eval(coeffs: np.ndarray, lam: np.ndarray, lam_max: float) -> np.ndarray:
    """Scalar evaluation of the truncated series (for error reporting)."""
    x = 2.0 * np.asarray(lam) / lam_max - 1.0
    t_prev, t_cur = np.ones_like(x), x
    out = 0.5 * coeffs[0] * t_prev
    if len(coeffs) > 1:
        out = out + coeffs[1] * t_cur
    for c in coeffs[2:]:
        t_prev, t_cur = t_cur, 2.0 * x * t_cur - t_prev
        out = out + c * t_cur
    return out


def chebyshev_wavelet(L: SparseMatrix, s: float, order: int = 10) -> WaveletOperator:
    if order < 1:
        raise WaveletConfigError(f"chebyshev order must be >= 1, got {order}")
    if s < 0:
        raise WaveletConfigError(f"wavelet scale must be >= 0, got {s}")
    lam_max = max(1.01 * estimate_lam_max(L), 1e-8)

    def g_fwd(lam):
        return np.exp(-s * lam)

    def g_inv(lam):
        return np.exp(s * lam)

    cf = chebyshev_coefficients(g_fwd, order, lam_max)
    ci = chebyshev_coefficients(g_inv, order, lam_max)
    grid = np.linspace(0.0, lam_max, 1001)
    err_f = float(np.max(np.abs(chebyshev_eval(cf, grid, lam_max) - g_fwd(grid))))
    err_i = float(np.max(np.abs(chebyshev_eval(ci, grid, lam_max) - g_inv(grid))))
    log.info("chebyshev wavelet: n=%d s=%g K=%d lam_max=%.6g err_fwd=%.3g err_inv=%.3g",
             L.num_rows, s, order, lam_max, err_f, err_i)
    return WaveletOperator("chebyshev", float(s), L.num_rows, laplacian=L, lam_max=lam_max,
                           coeffs_forward=cf, coeffs_inverse=ci,
                           max_error_forward=err_f, max_error_inverse=err_i)


def _cheb_apply(L: SparseMatrix, coeffs, lam_max, X):
    a = 2.0 / lam_max
    t_prev = X
    out = 0.5 * coeffs[0] * t_prev
    if len(coeffs) == 1:
        return out
    t_cur = a * L.matmul(X) - X
    out = out + coeffs[1] * t_cur
    for c in coeffs[2:]:
        t_next = 2.0 * (a * L.matmul(t_cur) - t_cur) - t_prev
        out = out + c * t_next
        t_prev, t_cur = t_cur, t_next
    return out


def apply(op: WaveletOperator, direction: str, X: np.ndarray) -> np.ndarray:
    """Apply the wavelet (``forward``) or its inverse to the columns of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != op.dim:
        raise ShapeError(f"operator dimension {op.dim} vs input {X.shape}")
    if direction not in (FORWARD, INVERSE):
        raise ValueError(f"direction must be forward or inverse, got {direction!r}")
    sign = -1.0 if direction == FORWARD else 1.0
    if op.mode == "exact":
        g = np.exp(sign * op.scale * op.eigvals)
        U = op.eigvecs
        out = U @ (g[:, None] * (U.T @ X))
    else:
        coeffs = op.coeffs_forward if direction == FORWARD else op.coeffs_inverse
        out = _cheb_apply(op.laplacian, coeffs, op.lam_max, np.ascontiguousarray(X))
    return out[:, 0] if squeeze else out


def build_wavelet(view: HypergraphView, s: float = 1.0, mode: str = "auto", order: int = 10,
                  dense_limit: int = DEFAULT_DENSE_LIMIT) -> WaveletOperator:
    """Wavelet operator for one side; ``auto`` picks exact under the dense limit."""
    L = normalized_laplacian(view)
    if mode == "auto":
        mode = "exact" if L.num_rows <= dense_limit else "chebyshev"
    if mode == "exact":
        return exact_wavelet(L, s, dense_limit)
    if mode == "chebyshev":
        return chebyshev_wavelet(L, s, order)
    raise WaveletConfigError(f"unknown wavelet mode {mode!r}")
