"""Build script for the optional compiled kernels.

The Cython extension is built when Cython and a C compiler are available;
otherwise the package installs with its pure-Python kernels only.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("LEVATTN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "levattn._ckernels",
                    ["src/levattn/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
