"""Build script: compiles the optional query-kernel extension.

The package works without the extension (a NumPy/SciPy fallback is selected
at import time), so a missing compiler or Cython only costs speed. Set
SPLATFORGE_SKIP_EXT=1 to skip the compile step entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPLATFORGE_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "splatforge._kernels._core",
                    ["src/splatforge/_kernels/_core.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
