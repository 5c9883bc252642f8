"""Build script: compiles the optional Cython kernel core.

The compiled extension is a pure speedup; the package falls back to the
numpy reference kernels when the build is unavailable. Set
OPSDLAB_NO_EXTENSION=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("OPSDLAB_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "opsdlab._kernels._core",
                    sources=["src/opsdlab/_kernels/_core.pyx"],
                    extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except Exception as exc:  # noqa: BLE001 - any build failure means pure-python install
        print(f"opsdlab: skipping compiled kernels ({exc}); pure-python fallback will be used")
        ext_modules = []

setup(ext_modules=ext_modules)
