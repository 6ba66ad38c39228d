"""Build script.

The package is pure Python plus one optional Cython extension holding the hot
Householder/WY kernels.  If Cython or a C compiler is unavailable the build
falls back to the pure-numpy kernels in ``structqr._kernels._fallback`` --
everything still works, just slower on large factorizations.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("STRUCTQR_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "structqr._kernels._core",
                    ["src/structqr/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
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
    except ImportError as exc:  # pragma: no cover - environment dependent
        sys.stderr.write(
            "structqr: building without the compiled kernel extension (%s)\n" % exc
        )
        ext_modules = []

setup(ext_modules=ext_modules)
