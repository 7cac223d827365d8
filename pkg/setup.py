"""Build script for the optional compiled window-hash kernel.

The package is pure Python except for querygame._winhash, a Cython extension
that accelerates the sliding-window fingerprint hashing (it links against
OpenSSL's libcrypto). The extension is marked optional: if Cython, a C
compiler, or the OpenSSL headers are missing, installation proceeds and the
package falls back to the hashlib implementation at import time.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "querygame._winhash",
                ["src/querygame/_winhash.pyx"],
                include_dirs=[numpy.get_include()],
                libraries=["crypto"],
                extra_compile_args=["-O2"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
