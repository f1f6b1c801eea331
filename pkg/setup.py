import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("OBJDEPTH_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "objdepth._kernels",
                    ["src/objdepth/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: the fallback must match bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
