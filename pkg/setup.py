from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the package falls back to pure Python at import
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("chquench._pgs", ["src/chquench/_pgs.pyx"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
