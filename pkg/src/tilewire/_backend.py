"""Kernel backend selection.

Prefers the compiled extension, falls back to the numpy implementation.
TW_BACKEND=native|python forces one (native raises if the extension is
missing). Both produce bit-identical output; only speed differs.
"""

import os

_forced = os.environ.get("TW_BACKEND", "").strip().lower()

if _forced == "python":
    from . import _kernels_py as _impl

    BACKEND = "python"
elif _forced in ("", "native"):
    try:
        from . import _kernels as _impl

        BACKEND = "native"
    except ImportError:
        if _forced == "native":
            raise
        from . import _kernels_py as _impl

        BACKEND = "python"
else:
    raise RuntimeError(f"TW_BACKEND must be 'native' or 'python', got {_forced!r}")

fill_triangles = _impl.fill_triangles
mip_region = _impl.mip_region


def get_impl(name: str):
    """Fetch a specific backend module by name (for the comparison bench)."""
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "native":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
