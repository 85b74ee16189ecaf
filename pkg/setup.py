"""Build script for the compiled convolution/pooling kernels.

The package works without the extension (a pure-numpy fallback is selected at
import time), but training is considerably faster with it compiled:
    pip install -e . --no-build-isolation
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "lesionbench.kernels._convcore",
        ["src/lesionbench/kernels/_convcore.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
)
