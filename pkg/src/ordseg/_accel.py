"""Backend switch for the numeric kernels.

Kernels are written twice: a loop version compiled with numba and a
vectorised numpy version. Set ``ORDSEG_DISABLE_NUMBA=1`` (before import)
to force the numpy path, e.g. when numba is unavailable or for debugging.
"""

import contextlib
import os

_DISABLED = os.environ.get("ORDSEG_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """``numba.njit(cache=True)`` when available, otherwise ``func`` unchanged."""
    if numba is None:
        return func
    return numba.njit(cache=True)(func)


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch every dispatcher to ``"numba"`` or ``"numpy"``."""
    global USE_NUMBA, BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    saved = USE_NUMBA, BACKEND
    USE_NUMBA, BACKEND = name == "numba", name
    try:
        yield
    finally:
        USE_NUMBA, BACKEND = saved
