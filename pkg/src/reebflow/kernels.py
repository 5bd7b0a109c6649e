"""
Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over.  Setting ``REEBFLOW_BACKEND=python`` forces the fallback, which is
how the equivalence tests and the benchmark run both.
"""
from __future__ import annotations

import os

from . import _fallback

try:  # pragma: no cover - depends on the build
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

__all__ = ["get", "available", "default_name"]


def available() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]


def default_name() -> str:
    forced = os.environ.get("REEBFLOW_BACKEND", "").strip().lower()
    if forced in ("python", "fallback"):
        return "python"
    return "compiled" if _compiled is not None else "python"


def get(name: str | None = None):
    """Kernel module by name (``"compiled"``, ``"python"``, or None for the default)."""
    name = default_name() if name is None else name
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name in ("python", "fallback"):
        return _fallback
    raise ValueError(f"unknown backend {name!r}")
