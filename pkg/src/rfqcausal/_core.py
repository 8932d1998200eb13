"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
NumPy implementations in ``_kernels_py`` are used.  Setting the environment
variable ``RFQCAUSAL_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_compiled = None

if os.environ.get("RFQCAUSAL_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py

grow_tree = _impl.grow_tree
predict_raw = _impl.predict_raw


def backend(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled', 'python' or current)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
