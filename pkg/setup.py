import numpy as np
from setuptools import Extension, setup

# The rotation kernels are plain C loops; -ffp-contract=off keeps the
# compiler from fusing multiply-adds so the compiled backend performs the
# same arithmetic as the pure-numpy one.
ext_modules = [
    Extension(
        "pencilguard._qz_cython",
        ["src/pencilguard/_qz_cython.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(ext_modules, language_level=3)
except ImportError:
    # Without Cython the package still installs; the pure-numpy backend is
    # picked up at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
