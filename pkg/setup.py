"""Build the optional compiled LSTM core.

If Cython or a compiler is missing the package still installs; the numpy
fallback in ``pdgm._lstm_py`` is then used at import.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled core not built ({exc}); using pure-python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: could not build {ext.name} ({exc}); using pure-python fallback")


def _simd_flags():
    """Vectorized libm (libmvec) needs AVX2/FMA on the build host."""
    try:
        with open("/proc/cpuinfo") as fh:
            flags = fh.read()
    except OSError:
        return [], []
    if " avx2" in flags and " fma" in flags:
        return ["-ffast-math", "-mavx2", "-mfma"], ["mvec"]
    return ["-fno-math-errno"], []


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    cflags, libs = _simd_flags()
    ext = Extension(
        "pdgm._lstm_ext",
        ["src/pdgm/_lstm_ext.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", *cflags],
        libraries=libs,
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
