import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "deepcontrast._speedups",
                ["src/deepcontrast/_speedups.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # pure-python fallback is selected at import time
    ext_modules = []

setup(ext_modules=ext_modules)
