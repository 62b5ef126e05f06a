from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "spoofdet._kernels._speedups",
                ["src/spoofdet/_kernels/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-python install still works; the numpy fallback kernels are used.
    extensions = []

setup(ext_modules=extensions)
