"""Numba switch.

Set ``SPARSEPDE_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba
is missing the numpy path is used silently.
"""
import os

DISABLED = os.environ.get("SPARSEPDE_DISABLE_NUMBA", "0") not in ("", "0", "false", "False")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)
