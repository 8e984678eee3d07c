"""Build hook for the optional compiled ray-cast kernel.

The package works without the extension (a vectorized numpy fallback is
selected at import time), so any failure here is tolerated rather than
aborting the install.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    import os

    if not os.path.exists("src/graspsim/_kernels/_raycast_cy.pyx"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        warnings.warn(f"compiled kernels skipped ({exc}); using pure-python fallback")
        return []
    ext = Extension(
        "graspsim._kernels._raycast_cy",
        sources=["src/graspsim/_kernels/_raycast_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"compiled kernels skipped ({exc}); using pure-python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"building {ext.name} failed ({exc}); using pure-python fallback")


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
