import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "decpg._speedups",
                ["src/decpg/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-march=native"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

# The package works without the extension (pure-numpy fallback is selected
# at import), so a failed cythonize is not fatal for source installs.
setup(ext_modules=extensions)
