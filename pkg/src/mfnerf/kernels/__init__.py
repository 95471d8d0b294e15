"""Volume-render kernel selection.

The compiled Cython backend is used when it imports and the grid is
float64; otherwise the numpy fallback runs.  MFNERF_KERNEL=numpy|cython
forces a backend (cython raises if the extension is unavailable).
"""

import os

import numpy as np

from . import _render_np

try:
    from . import _render_cy

    HAVE_CYTHON = True
except ImportError:
    _render_cy = None
    HAVE_CYTHON = False

_FORCED = os.environ.get("MFNERF_KERNEL", "").strip().lower()
if _FORCED == "cython" and not HAVE_CYTHON:
    raise ImportError("MFNERF_KERNEL=cython but the compiled extension is not importable")
if _FORCED not in ("", "numpy", "cython"):
    raise ValueError(f"MFNERF_KERNEL must be 'numpy' or 'cython', got {_FORCED!r}")


def available_backends():
    return ("numpy", "cython") if HAVE_CYTHON else ("numpy",)


def get_backend(name):
    if name == "numpy":
        return _render_np
    if name == "cython":
        if not HAVE_CYTHON:
            raise ValueError("cython backend not built")
        return _render_cy
    raise ValueError(f"unknown kernel backend {name!r}")


def backend_for(params):
    """Pick the kernel module for a given parameter array."""
    if _FORCED:
        return get_backend(_FORCED)
    if HAVE_CYTHON and params.dtype == np.float64:
        return _render_cy
    return _render_np


def backend_name(params):
    mod = backend_for(params)
    return "cython" if mod is _render_cy else "numpy"
