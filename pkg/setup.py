"""Build script: compiles the optional Cython speedups.

If Cython (or a C compiler) is unavailable the package installs as pure
Python and glucoloop._core falls back to the NumPy reference kernels.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "glucoloop._core._speed",
                ["src/glucoloop/_core/_speed.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )

setup(ext_modules=ext_modules)
