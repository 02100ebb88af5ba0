"""Engine selection: compiled Cython kernels with a pure-Python fallback.

The compiled module is optional; when it failed to build the solver runs on
the interpreted mirror loops with identical numerics.
"""

from __future__ import annotations

from . import pyloop

try:
    from . import fastloop as _fastloop
except ImportError:  # extension not built
    _fastloop = None

ENGINES = ("auto", "compiled", "python")


def compiled_available() -> bool:
    return _fastloop is not None


def resolve(engine: str = "auto") -> str:
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")
    if engine == "auto":
        return "compiled" if _fastloop is not None else "python"
    if engine == "compiled" and _fastloop is None:
        raise RuntimeError("compiled engine requested but the extension is not built")
    return engine


def truncated_native(engine: str = "auto"):
    return _fastloop.run_truncated_native if resolve(engine) == "compiled" \
        else pyloop.run_truncated_native


def plain_native(engine: str = "auto"):
    return _fastloop.run_plain_native if resolve(engine) == "compiled" \
        else pyloop.run_plain_native
