"""Kernel backend selection.

The compiled Cython core is preferred; the pure-Python reference backend is
the fallback and the semantic ground truth. Selection happens once at import,
overridable with CKKSFAULT_BACKEND=python|compiled (the latter raises if the
extension is missing rather than falling back silently).
"""

import os
import warnings

from . import pyref

try:
    from . import _core
except ImportError:  # pragma: no cover - depends on build environment
    _core = None

_requested = os.environ.get("CKKSFAULT_BACKEND", "").strip().lower()

if _requested == "python":
    active = pyref
elif _requested == "compiled":
    if _core is None:
        raise ImportError(
            "CKKSFAULT_BACKEND=compiled but ckksfault.backends._core is not built"
        )
    active = _core
elif _core is not None:
    active = _core
else:  # pragma: no cover
    warnings.warn(
        "compiled kernel backend unavailable; falling back to the slow "
        "pure-Python backend",
        RuntimeWarning,
        stacklevel=2,
    )
    active = pyref


def available():
    """Name -> module for every importable backend."""
    out = {"python": pyref}
    if _core is not None:
        out["compiled"] = _core
    return out
