"""Build the optional Cython kernel extension.

If Cython or a C compiler is unavailable the package still installs; the
pure-Python kernels are selected at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("ECSGD_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ecsgd._ckernels",
                    ["src/ecsgd/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no fast-math, no FMA contraction: kernels must match the
                    # numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
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
