"""Build script for the optional compiled codec kernels.

The package is pure Python by default. When Cython and a C compiler are
available, ``wirestack._speedups`` is compiled from ``_speedups.pyx`` and
picked up automatically at import time (see ``wirestack/kernels.py``).
Any build failure falls back to the pure-Python kernels, so installation
never fails because of the extension.

Force a source-only install with ``WIRESTACK_NO_EXT=1``.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that downgrades compilation failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or toolchain missing
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(f"WARNING: building wirestack._speedups failed ({exc}); "
              "falling back to the pure-Python kernels")


def extensions():
    if os.environ.get("WIRESTACK_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("WARNING: Cython not available; installing pure-Python kernels only")
        return []
    return cythonize(
        [Extension("wirestack._speedups", ["src/wirestack/_speedups.pyx"])],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
