"""Builds the optional Cython kernels; the package still works without them."""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any compiler failure falls back to pure Python
            print(f"warning: compiled kernels not built ({exc}); using the pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: could not build {ext.name} ({exc}); using the pure-Python fallback")


try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension("distvc._kernels._ckernels", ["src/distvc/_kernels/_ckernels.pyx"], extra_compile_args=["-O3"]),
            Extension("distvc._kernels._cloop", ["src/distvc/_kernels/_cloop.pyx"], extra_compile_args=["-O3"]),
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
