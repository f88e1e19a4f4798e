"""Build script for the optional compiled kernel extension.

The package works without the extension: smilefusion.kernels falls back to
numpy implementations when the compiled module is absent or when
SMILEFUSION_PURE_PYTHON=1 is set.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "smilefusion.kernels._ckernels",
                ["src/smilefusion/kernels/_ckernels.pyx"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    # No Cython available: install pure-python only.
    pass

setup(ext_modules=ext_modules)
