"""Kernel backend selection.

Hot loops are written once, in a numba-compatible subset of numpy.  With
the ``numba`` backend they are compiled with ``@njit``; with the ``numpy``
backend the decorator is the identity and the same source runs as plain
Python.  Select with the ``RABLAB_BACKEND`` environment variable
(``numba`` or ``numpy``) before the package is imported.
"""

import os

_requested = os.environ.get("RABLAB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"RABLAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numba":
        import numba as _numba
    else:
        _numba = None
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched on the numpy backend."""
    if NUMBA_AVAILABLE:
        return _numba.njit(cache=True)(fn)
    return fn


def py_func(fn):
    """Interpreted version of a kernel (for Python-level callables as arguments)."""
    return getattr(fn, "py_func", fn)
