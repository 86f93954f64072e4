"""Select compiled or pure-numpy kernels at import time.

Set ``CKMSCM_BACKEND=python`` to force the numpy fallback.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("CKMSCM_BACKEND", "").lower() == "python":
    compiled = None
else:
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

kernels = compiled if compiled is not None else _fallback
NAME = "cython" if compiled is not None else "numpy"


def get(name=None):
    """Return the kernel module ``name`` ("cython" or "numpy"), or the active one."""
    if name is None:
        return kernels
    if name == "numpy":
        return _fallback
    if name == "cython":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
