from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "phrasecomp.backends._ctrain",
        ["src/phrasecomp/backends/_ctrain.pyx"],
    )
]

if cythonize is not None:
    ext_modules = cythonize(
        extensions,
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
else:
    # No Cython: install pure-Python only; training falls back to the
    # numpy backend selected in phrasecomp.backends.
    ext_modules = []

setup(ext_modules=ext_modules)
