"""Backend selection for the hot loops.

``TRACTIONNAV_BACKEND`` may be ``auto`` (default: compiled if importable),
``cython`` (fail if the extension is missing) or ``numpy``.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _fallback


def load(name: str = "auto") -> ModuleType:
    if name == "numpy":
        return _fallback
    try:
        from . import _core
    except ImportError:
        if name == "cython":
            raise
        return _fallback
    return _core


def available() -> list[str]:
    names = ["numpy"]
    try:
        from . import _core  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


backend = load(os.environ.get("TRACTIONNAV_BACKEND", "auto"))
lookup = backend.lookup
rollout_costs = backend.rollout_costs
shoot = backend.shoot
BACKEND = backend.BACKEND
