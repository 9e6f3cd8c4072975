"""JIT switch for the graph kernels.

Set ``SECWIT_DISABLE_NUMBA=1`` to run the pure Python/numpy path.
"""

import os

_FLAG = os.getenv("SECWIT_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes")


def njit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
