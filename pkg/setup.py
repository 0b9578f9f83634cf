"""Builds the optional compiled kernels; the package works without them."""

import os

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    pass
else:
    if not os.environ.get("LOWBIT_NO_EXT"):
        ext_modules = cythonize(
            [
                Extension(
                    "lowbit._ckernels",
                    ["src/lowbit/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
