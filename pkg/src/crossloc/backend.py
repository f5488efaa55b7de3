"""Kernel backend selection.

The compiled extension (`crossloc._kernels`, Cython) is preferred when it
imported cleanly; otherwise the pure-numpy twin in `crossloc.kernels_py` is
used. Override with CROSSLOC_KERNELS=python|compiled.
"""

import os

from . import kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_FORCE = os.environ.get("CROSSLOC_KERNELS", "").strip().lower()

if _FORCE == "python":
    kernels = kernels_py
elif _FORCE == "compiled":
    if _compiled is None:
        raise ImportError(
            "CROSSLOC_KERNELS=compiled but crossloc._kernels is not built; "
            "reinstall with a C compiler available"
        )
    kernels = _compiled
else:
    kernels = _compiled if _compiled is not None else kernels_py


def backend_name() -> str:
    return "compiled" if kernels is _compiled and _compiled is not None else "python"


def get_backend(name: str):
    """Return a kernel module by name ('python' or 'compiled')."""
    if name == "python":
        return kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels unavailable")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
