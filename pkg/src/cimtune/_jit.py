"""JIT selection.

Hot loops are written once in a numba-compatible subset of Python. When
``CIMTUNE_NO_JIT`` is set to a truthy value (or numba is unavailable) the same
functions run as plain Python over numpy arrays.
"""

import os

_FLAG = os.environ.get("CIMTUNE_NO_JIT", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and not DISABLED


def njit(fn=None, **kwargs):
    """``numba.njit`` with caching, or the identity when JIT is off."""
    if fn is None:
        return lambda f: njit(f, **kwargs)
    if not USE_NUMBA:
        return fn
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(**kwargs)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "python"
