"""Builds the optional compiled range coder; the package falls back to pure Python without it."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: pure-Python coder only
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("v2icoop.codec._rangecoder_c", ["src/v2icoop/codec/_rangecoder_c.pyx"],
                   extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
