"""Kernel backend selection.

The compiled extension is preferred when present; CAMPC_BACKEND=python or
CAMPC_BACKEND=cython forces a choice (the latter raises if the extension
is missing).  CAMPC_THREADS caps the row-level parallelism of the generic
presolve path.
"""

import os

from . import _kernels_py

_requested = os.environ.get("CAMPC_BACKEND", "").strip().lower()

if _requested == "python":
    kernels = _kernels_py
elif _requested == "cython":
    from . import _kernels as kernels  # noqa: F401
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py


def backend_name():
    return kernels.BACKEND


def presolve_threads():
    """Worker cap for row-parallel presolve; 1 disables threading."""
    raw = os.environ.get("CAMPC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
