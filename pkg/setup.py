import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TWINQE_NO_EXTENSION"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "twinqe._ckernel",
                    ["src/twinqe/_ckernel.pyx"],
                    include_dirs=[np.get_include()],
                    # bit-identical results with the numpy fallback need strict IEEE ops
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
