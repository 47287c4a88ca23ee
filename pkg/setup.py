import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; tractionnav falls back to numpy kernels
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("TRACTIONNAV_NO_EXT"):
    omp = [] if os.environ.get("TRACTIONNAV_NO_OPENMP") else ["-fopenmp"]
    ext_modules = cythonize(
        [
            Extension(
                "tractionnav._core",
                ["src/tractionnav/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"] + omp,
                extra_link_args=omp,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
