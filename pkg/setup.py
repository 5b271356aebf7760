"""Build script: compiles the quasi-Monte Carlo sweep kernel when possible.

The extension is optional -- if no C compiler (or Cython) is available the
package installs anyway.  `multipipe.mvn` uses the pure-numpy kernel by
default either way; set MULTIPIPE_MVN_BACKEND=compiled to select the
extension (benchmarks/bench_mvn.py shows where each one wins).
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "multipipe._mvnkern",
        sources=["src/multipipe/_mvnkern.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level="3")
except ImportError:
    pass

setup(ext_modules=ext_modules)
