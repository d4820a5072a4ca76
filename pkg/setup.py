"""Build the optional compiled sampler.

If Cython or a C compiler is missing the package installs without it and
falls back to the numpy sampler at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("DOBRUSHIN_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("dobrushin._core", ["src/dobrushin/_core.pyx"],
                       include_dirs=[numpy.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
