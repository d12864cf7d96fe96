"""Build script: compiles the optional geometry kernel extension.

The extension is an accelerator only. If Cython or a C compiler is
unavailable the install still succeeds and the package falls back to the
pure numpy kernels at import time (see sparseavatar.geometry.backend).

Build in place for development:  python setup.py build_ext --inplace
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "sparseavatar.geometry._kernels",
                ["src/sparseavatar/geometry/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    sys.stderr.write(f"sparseavatar: skipping compiled kernels ({exc})\n")
    ext_modules = []

setup(ext_modules=ext_modules)
