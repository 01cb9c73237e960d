import os

from setuptools import setup

ext_modules = []
if not os.environ.get("HARMDISK_NO_CYTHON"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "harmdisk._kernels.cykernels",
                    ["src/harmdisk/_kernels/cykernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython/numpy at build time: install pure-python; the package
        # falls back to the numpy kernels at import.
        ext_modules = []

setup(ext_modules=ext_modules)
