"""Backend selection for the compiled kernels.

Set ``ODECHECK_DISABLE_NUMBA=1`` before import to force the pure-numpy
paths. The flag only picks an implementation; results agree to rounding.
"""

import os

_FLAG = os.environ.get("ODECHECK_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(func=None, *, cache=True):
    """``numba.njit`` when the compiled backend is active, identity otherwise."""

    def wrap(f):
        if USE_NUMBA:
            return numba.njit(cache=cache)(f)
        return f

    if func is None:
        return wrap
    return wrap(func)


def is_compiled(func):
    return USE_NUMBA and hasattr(func, "py_func")


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
