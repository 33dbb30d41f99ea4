import os
import platform
import sys

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# PAMFK_PORTABLE=1 drops -march=native for binaries that move between hosts.
compile_args = ["-O3", "-ffast-math"]
if not os.environ.get("PAMFK_PORTABLE"):
    compile_args.append("-march=native")

# gcc vectorizes exp() under -ffast-math through glibc's libmvec.
libraries = []
if sys.platform.startswith("linux") and platform.machine() == "x86_64":
    libraries.append("mvec")

ext = Extension(
    "pamfk._pairsum",
    ["src/pamfk/_pairsum.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=compile_args,
    libraries=libraries,
)

setup(
    ext_modules=cythonize([ext], language_level=3),
)
