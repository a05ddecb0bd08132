"""Build the optional compiled kernels.

Install with ``pip install -e . --no-build-isolation``. If compilation is
not possible the package still works through its pure-Python kernels.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("QGRAPHON_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "qgraphon._ckernels",
                    ["src/qgraphon/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
