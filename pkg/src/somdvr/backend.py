"""Kernel backend selection.

The compiled extension is preferred when present; the numpy fallback is
bit-compatible, so switching backends never changes results (see
tests/test_backends.py). Override with SOMDVR_BACKEND=native|python.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load_native():
    from . import _native  # noqa: PLC0415

    return _native


def get_backend(name: str | None = None) -> ModuleType:
    """Return a kernel module by name ('native', 'python', or None/auto)."""
    if name in (None, "auto"):
        name = os.environ.get("SOMDVR_BACKEND", "auto")
    if name == "python":
        return _pykernels
    if name == "native":
        return _load_native()
    if name == "auto":
        try:
            return _load_native()
        except ImportError:
            return _pykernels
    raise ValueError(f"unknown backend {name!r} (expected native|python|auto)")


kernels = get_backend()
BACKEND_NAME: str = kernels.NAME
