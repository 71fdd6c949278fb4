"""Build script for the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler or Cython only costs speed.
"""

import os
import sys

from setuptools import setup
from setuptools.extension import Extension

try:
    import numpy
except ImportError:  # pragma: no cover - numpy is a hard install dep anyway
    numpy = None

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


def extensions():
    if cythonize is None or numpy is None:
        return []
    compile_args = ["-O3"]
    link_args = []
    if sys.platform != "win32":
        compile_args.append("-fopenmp")
        link_args.append("-fopenmp")
        # source-only distribution, so tuning for the build host is safe;
        # set DEEPVOX_PORTABLE=1 to build baseline code instead
        if not os.environ.get("DEEPVOX_PORTABLE"):
            compile_args.append("-march=native")
    ext = Extension(
        "deepvox.nd._kernels",
        ["src/deepvox/nd/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
    )
    return cythonize([ext], language_level="3")


if os.environ.get("DEEPVOX_SKIP_EXT"):
    ext_modules = []
else:
    ext_modules = extensions()

setup(ext_modules=ext_modules)
