"""Build script for the compiled top-K selection kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile only costs retrieval speed. Metadata
lives in pyproject.toml.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "patchspot.retrieval._topk",
                ["src/patchspot/retrieval/_topk.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
