from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # No Cython: install the pure-Python package; the solver falls back to
    # the interpreted loop at import time.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "truncsa._engine.fastloop",
                ["src/truncsa/_engine/fastloop.pyx"],
                # -ffp-contract=off keeps the compiled loop bit-identical to
                # the pure-Python fallback (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
