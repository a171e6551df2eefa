"""Build script for the optional compiled kernel core.

The package is pure Python plus one Cython extension, duo.kernels._ckernels,
holding the hot numeric loops (3x3 correlation/convolution, bilinear resize,
Jacobi eigensolver). If Cython or a C compiler is unavailable the build
falls back to the pure-numpy kernels selected at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "duo.kernels._ckernels",
                sources=["src/duo/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
