"""Wavelet-enhanced hypergraph diffusion recommender.

Submodules: ``data`` (ingest and splits), ``hypergraph`` (incidence views),
``spectral`` (wavelet operators), ``diffcore`` (reverse-mode tape), ``model``,
``objectives``, ``trainer``, ``metrics`` and ``cli``.
"""
from .config import TrainConfig
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["TrainConfig", "BACKEND", "__version__"]
