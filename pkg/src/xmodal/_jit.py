"""Numba shim.

Set ``XMODAL_NUMBA=0`` to skip importing numba entirely and run every hot
kernel through its vectorized numpy twin. When numba is missing the numpy
path is used as well.
"""
import os
import warnings

_OFF = {"0", "false", "off", "no"}

NUMBA_REQUESTED = os.environ.get("XMODAL_NUMBA", "1").strip().lower() not in _OFF

HAVE_NUMBA = False
if NUMBA_REQUESTED:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba ships with the dev env
        warnings.warn("numba is not installed - falling back to numpy kernels")

if not HAVE_NUMBA:

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"
