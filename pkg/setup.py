"""Build script for the optional compiled Monte Carlo kernel.

The package is pure Python except for epic._mc, a Cython extension that
accelerates collusion Monte Carlo trials.  If Cython or a C compiler is
unavailable the build falls back to the pure-Python/numpy implementation
(selected automatically at import time), so installation never fails on
account of the extension.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/epic/_mc.pyx"],
        language_level="3",
        compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"warning: skipping compiled _mc kernel ({exc}); "
                     "pure-Python fallback will be used\n")

setup(ext_modules=ext_modules)
