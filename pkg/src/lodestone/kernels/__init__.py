"""Hot-loop kernels with two interchangeable backends.

`_numba` carries @njit-compiled kernels; `_numpy` is a pure numpy/python
fallback implementing the same contracts. Selection order:

  1. env var LODESTONE_KERNELS = "numba" | "numpy" | "auto" (default auto)
  2. auto prefers numba when it imports, else falls back silently

Both backends are individually deterministic. Sparse kernels are bit-identical
across backends; HNSW kernels may differ in rare float near-ties (BLAS vs
sequential reduction order) but each is reproducible run-to-run.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

logger = logging.getLogger(__name__)

_ENV_VAR = "LODESTONE_KERNELS"
_active: ModuleType | None = None
_active_name: str | None = None


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _load(name: str) -> ModuleType:
    if name == "numba":
        from . import _numba

        return _numba
    if name == "numpy":
        from . import _numpy

        return _numpy
    raise ValueError(f"unknown kernel backend {name!r} (expected 'numba' or 'numpy')")


def set_backend(name: str) -> str:
    """Force a backend; returns the name actually activated."""
    global _active, _active_name
    name = name.lower()
    if name == "auto":
        name = "numba" if _numba_available() else "numpy"
    _active = _load(name)
    _active_name = name
    return name


def backend_name() -> str:
    if _active_name is None:
        _init_from_env()
    return _active_name  # type: ignore[return-value]


def active() -> ModuleType:
    """The kernel module currently in effect."""
    if _active is None:
        _init_from_env()
    return _active  # type: ignore[return-value]


def _init_from_env() -> None:
    requested = os.environ.get(_ENV_VAR, "auto").lower()
    if requested == "auto":
        set_backend("numba" if _numba_available() else "numpy")
    elif requested in ("numba", "numpy"):
        set_backend(requested)
    else:
        logger.warning("ignoring %s=%r, using auto", _ENV_VAR, requested)
        set_backend("auto")
