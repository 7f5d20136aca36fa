"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``SEPLEARN_PURE_PYTHON=1`` to force the numpy kernels.
"""
import os

from . import _kernels_py

NAME = "python"
kernels = _kernels_py

if os.environ.get("SEPLEARN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        NAME = "compiled"


def get(name=None):
    """Return the kernel module by name (``"compiled"``, ``"python"``) or the default."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return ["python"]
    return ["compiled", "python"]
