"""Build script for the compiled image kernels.

The non-local means kernel is the hot loop of the pipeline; it is built as a
Cython extension.  If Cython or a C compiler is unavailable the package still
installs and falls back to the pure-numpy kernel at import time (see
``octpad.kernels``), at a large speed cost.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "octpad._nlm_c",
                ["src/octpad/_nlm_c.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no -ffast-math: the kernel must stay bit-reproducible
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
