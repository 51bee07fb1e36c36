"""Kernel selection.

The compiled extension is used when importable; ``PSWINFER_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import _pykernels

_force_py = os.environ.get("PSWINFER_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure python requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

fit_logistic = _impl.fit_logistic
replicate_estimates = _impl.replicate_estimates

# status codes shared by both implementations
ST_OK = _pykernels.ST_OK
ST_QUASI = _pykernels.ST_QUASI
ST_SINGULAR = _pykernels.ST_SINGULAR
ST_NOVAR = _pykernels.ST_NOVAR
ST_NONCONV = _pykernels.ST_NONCONV
ST_EMPTY_ARM = _pykernels.ST_EMPTY_ARM
ST_DEGENERATE = _pykernels.ST_DEGENERATE

STATUS_NAMES = {
    ST_OK: "ok",
    ST_QUASI: "QuasiSeparation",
    ST_SINGULAR: "SingularInformation",
    ST_NOVAR: "NoVariation",
    ST_NONCONV: "QuasiSeparation",
    ST_EMPTY_ARM: "EmptyArm",
    ST_DEGENERATE: "DegeneratePropensity",
}


def kernels(name: str | None = None):
    """Return a kernel module by name ('cython' or 'python'); active one by default."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
