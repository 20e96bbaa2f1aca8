"""Kernel backend selection.

The compiled extension is used when it imports cleanly; set
``ROSAQ_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _fallback

kernels = _fallback
NAME = "python"

if os.environ.get("ROSAQ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        kernels = _compiled
        NAME = "cython"


def get(name: str):
    """Return the kernel module called ``name`` ("cython" or "python")."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
