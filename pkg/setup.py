"""Build script for the compiled kernel extension.

The package works without the extension (a pure NumPy/Python fallback is
selected at import time), so the build degrades gracefully when Cython or
a C compiler is unavailable.
"""

from setuptools import setup

try:
    import numpy as np
    from setuptools import Extension
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "binhash._kernels._core",
                ["src/binhash/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
