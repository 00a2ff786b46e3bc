import os

from setuptools import setup

ext_modules = []
if os.environ.get("POPSIGNAL_PURE", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "popsignal._kernels._ckernels",
                    ["src/popsignal/_kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # no Cython at build time: the package falls back to _pure
        ext_modules = []

setup(ext_modules=ext_modules)
