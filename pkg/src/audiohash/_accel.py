"""Backend selection for the hot kernels.

Set ``AUDIOHASH_DISABLE_NUMBA=1`` to force the pure-numpy path. The numba
path is used otherwise when numba imports cleanly.
"""

import os

_DISABLED = os.environ.get("AUDIOHASH_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by AUDIOHASH_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
