import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "resmem._kernels._core",
                ["src/resmem/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

# The package works without the extension: resmem._kernels falls back to the
# NumPy implementation when the compiled module is missing.
setup(ext_modules=extensions)
