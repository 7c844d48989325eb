import numpy as np
from setuptools import setup

# The compiled kernels are optional: without Cython (or a working compiler)
# the package installs pure-Python and selects the numpy fallback at import.
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "tilewire._kernels",
                ["src/tilewire/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off keeps float math bit-identical to the
                # numpy fallback (no FMA contraction). Never -ffast-math.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
