"""Kernel backend selection.

The convolution kernels exist in two flavors: numba-jitted loops (default)
and a pure-numpy path built on stride tricks. Set ``AFFECTNN_BACKEND=numpy``
to force the numpy path, e.g. on platforms where numba is unavailable or
while debugging. The choice is made once at import time.
"""

import os


def _pick_backend() -> str:
    choice = os.environ.get("AFFECTNN_BACKEND", "numba").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice not in ("", "numba"):
        raise ValueError(
            f"AFFECTNN_BACKEND must be 'numba' or 'numpy', got {choice!r}"
        )
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


BACKEND = _pick_backend()
