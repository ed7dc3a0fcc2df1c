"""Build script: compiles the optional scoring kernels extension.

If Cython or a C toolchain is unavailable the package still installs;
ragdesk.kernels falls back to the pure-numpy implementation at import time.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/ragdesk/kernels/_kernels.pyx"],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
    include_dirs = [numpy.get_include()]
except Exception:
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
