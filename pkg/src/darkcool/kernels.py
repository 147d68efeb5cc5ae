"""Backend selection for the Lindblad right-hand side.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set DARKCOOL_BACKEND=python to force the fallback.
"""
import os

from . import _lindblad_py

BACKEND = "python"
_impl = _lindblad_py

if os.environ.get("DARKCOOL_BACKEND", "").lower() != "python":
    try:
        from . import _lindblad as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def get_backend(name=None):
    """Return (name, module) for the requested backend, or the active one."""
    if name is None:
        return BACKEND, _impl
    if name == "python":
        return "python", _lindblad_py
    if name == "compiled":
        from . import _lindblad
        return "compiled", _lindblad
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    try:
        from . import _lindblad  # noqa: F401
    except ImportError:
        return False
    return True
