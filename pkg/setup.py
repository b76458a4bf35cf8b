"""Build the optional Cython kernels.

The package works without them: ``adoptnet.kernels`` falls back to the
numpy implementation when the extension cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ADOPTNET_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "adoptnet._ckernels",
                    ["src/adoptnet/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math: kernels must keep IEEE evaluation order
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
