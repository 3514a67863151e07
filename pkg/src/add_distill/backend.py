"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the numpy
twins in ``_fallback`` are used. Set ``ADD_DISTILL_BACKEND=python`` to force
the fallback (``compiled`` makes a missing extension an ImportError).
"""
import os

from . import _fallback

_requested = os.environ.get("ADD_DISTILL_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _fallback
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        if _requested == "compiled":
            raise
        kernels = _fallback

BACKEND = "python" if kernels is _fallback else "compiled"

fallback = _fallback


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("compiled" or "python"), or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
