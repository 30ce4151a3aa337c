"""Kernel dispatch: the compiled extension when available, else pure Python.

Set ``PARAMSTUDY_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

try:
    if os.environ.get("PARAMSTUDY_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

label = _impl.label
component_runs = _impl.component_runs
intersect_runs = _impl.intersect_runs

BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl
