import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = cythonize(
    [
        Extension(
            "chrononet._kernels._core",
            ["src/chrononet/_kernels/_core.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ],
    language_level=3,
)

setup(ext_modules=ext_modules)
