"""Kernel backend selection.

The compiled extension is used when it imports; set
``WAVEHDNN_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("WAVEHDNN_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

csr_matmul = _impl.csr_matmul
csr_t_matmul = _impl.csr_t_matmul
topk_masked = _impl.topk_masked


def backends():
    """Map of available backend name -> module, for tests and benchmarks."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
