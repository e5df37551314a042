"""Build script for the optional compiled decode kernel.

The package is pure Python plus one Cython extension (`wordspot._native`)
holding the batched argmax-of-products kernel used by grid decoding.  The
extension is a fast path only: every caller falls back to the numpy
implementation in `wordspot.kernels` when the import fails, so a machine
without a C compiler still gets a fully working install.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Treat extension build failures as a warning, not an error."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing entirely
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"WARNING: building the wordspot._native extension failed ({exc}); "
            "the pure numpy kernels will be used instead.",
            file=sys.stderr,
        )


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"WARNING: {exc}; skipping the compiled kernel.", file=sys.stderr)
        return []
    ext = Extension(
        "wordspot._native",
        ["src/wordspot/_native.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
