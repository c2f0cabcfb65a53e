import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = cythonize(
    [
        Extension(
            "psgmt._speedups",
            sources=["src/psgmt/_speedups.pyx"],
            include_dirs=[np.get_include()],
        )
    ],
    language_level=3,
)

setup(ext_modules=ext_modules)
