import numpy as np
from setuptools import Extension, setup

# The compiled kernel is optional: the package falls back to a numpy
# implementation when the extension is unavailable (see dmpc.kernels).
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "dmpc._fast",
                ["src/dmpc/_fast.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
