"""Kernel selection: the compiled extension when importable, else the NumPy fallback.

Set ``MGDEFENSE_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernel

BACKEND_ENV = "MGDEFENSE_BACKEND"

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None


def available() -> list[str]:
    return ["compiled", "python"] if _ckernel is not None else ["python"]


def kernel_class(name: str | None = None):
    name = name or os.environ.get(BACKEND_ENV, "").strip().lower() or None
    if name in (None, "compiled", "cython", "c"):
        if _ckernel is not None:
            return _ckernel.Kernel
        if name is not None:
            raise RuntimeError("compiled kernel requested but the extension is not built")
        return _pykernel.Kernel
    if name in ("python", "numpy", "py"):
        return _pykernel.Kernel
    raise ValueError(f"unknown backend {name!r}")


def active() -> str:
    return "compiled" if kernel_class() is not _pykernel.Kernel else "python"
