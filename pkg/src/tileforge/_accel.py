"""Backend selection for the hot loops.

Set ``TILEFORGE_DISABLE_NUMBA=1`` to force the pure-numpy path. When numba is
not importable the numpy path is used regardless.
"""

import os

_FALSE = {"", "0", "false", "no", "off"}


def _flag_disabled() -> bool:
    return os.environ.get("TILEFORGE_DISABLE_NUMBA", "").strip().lower() not in _FALSE


try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _flag_disabled()


def njit(fn):
    """``numba.njit(cache=True)`` when numba is present, identity otherwise."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
