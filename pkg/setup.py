"""Build script: compiles the optional Cython kernels.

The package works without the extension (numpy fallback selected at
import); a failed compile therefore only warns.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "fabsched._kernels",
                ["src/fabsched/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # noqa: BLE001
    print(f"fabsched: skipping compiled kernels ({exc}); numpy fallback will be used",
          file=sys.stderr)

setup(ext_modules=ext_modules)
