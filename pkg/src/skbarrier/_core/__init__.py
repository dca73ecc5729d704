"""Path-kernel backend selection.

The compiled extension is used when importable; ``SKB_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _fallback
from .config import CAP, CAUSES, EXIT, NORMAL, REVERSED, RULE, KernelConfig

_want = os.environ.get("SKB_BACKEND", "auto").lower()
_compiled = None
if _want != "python":
    try:
        from . import _kernel as _compiled
    except ImportError:
        if _want == "compiled":
            raise
        _compiled = None

backend = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name=None):
    """Kernel module by name (``"compiled"``, ``"python"`` or None for the default)."""
    if name is None:
        return backend
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def run_paths(cfg, starts, refs, path_ids, record=False):
    return backend.run_paths(cfg, starts, refs, path_ids, record=record)


def record_path(cfg, start, ref, path_id):
    return backend.record_path(cfg, start, ref, path_id)


__all__ = ["KernelConfig", "RULE", "EXIT", "CAP", "CAUSES", "NORMAL", "REVERSED",
           "BACKEND", "get_backend", "run_paths", "record_path"]
