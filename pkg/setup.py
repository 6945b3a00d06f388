"""Build script for the optional compiled likelihood core.

The package works without the extension (a pure-Python fallback is selected
at import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import warnings

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "metocal._core._native",
                sources=["src/metocal/_core/_native.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    warnings.warn(f"compiled core skipped ({exc}); pure-Python fallback will be used")
    ext_modules = []

setup(ext_modules=ext_modules)
