"""Numerical core with a compiled fast path and a NumPy fallback.

The Cython extension is preferred when it imported cleanly; set
``GLUCOLOOP_PURE=1`` to force the reference implementation.
"""

import os

from . import _pyref

if os.environ.get("GLUCOLOOP_PURE", "0") == "1":
    _impl = _pyref
    BACKEND = "python"
else:
    try:
        from . import _speed as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _pyref
        BACKEND = "python"

composite_kernel = _impl.composite_kernel
rk4_path = _impl.rk4_path

__all__ = ["BACKEND", "composite_kernel", "rk4_path"]
