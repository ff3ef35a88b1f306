from setuptools import Extension, setup

# The compiled kernels are optional: without Cython (or a C compiler) the
# package falls back to the pure-Python kernels at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("shallowflow._kernels", ["src/shallowflow/_kernels.pyx"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
