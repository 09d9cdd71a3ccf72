import platform

from setuptools import Extension, setup
from Cython.Build import cythonize
import numpy as np

compile_args = ["-O3"]
if platform.machine() in ("x86_64", "AMD64"):
    # hardware popcount; baseline x86-64 would fall back to a libgcc call
    compile_args.append("-mpopcnt")

extensions = [
    Extension(
        "bitturbo.bitkernel._core",
        ["src/bitturbo/bitkernel/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
    ),
]

setup(ext_modules=cythonize(extensions, language_level="3"))
