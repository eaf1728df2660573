"""Build the optional Cython kernels.

The extension is optional: when Cython or a C compiler is missing the
package installs without it and falls back to the numpy kernels at import.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("WAVEHDNN_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "wavehdnn._kernels",
                    ["src/wavehdnn/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
