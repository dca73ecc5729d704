"""Builds the optional compiled path kernel; the package works without it."""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("SKB_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        omp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext = Extension(
            "skbarrier._core._kernel",
            ["src/skbarrier/_core/_kernel.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"] + omp,
            extra_link_args=omp,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize([ext], language_level=3)
    except ImportError:
        print("Cython/numpy unavailable: installing the pure-Python kernel only", file=sys.stderr)

setup(ext_modules=ext_modules)
