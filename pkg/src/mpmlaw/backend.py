"""Kernel backend selection.

The particle-grid transfers and the batched 3x3 SVD are the hot paths. They
exist twice: a numba ``@njit`` implementation (default) and a pure-numpy
fallback. The active backend is chosen by the ``NCLAW_BACKEND`` environment
variable (``numba`` or ``numpy``); unset means numba when importable, numpy
otherwise. ``NCLAW_THREADS`` caps worker threads of the numba threading layer
and is best set together with ``OMP_NUM_THREADS`` before python starts.
"""

from __future__ import annotations

import importlib
import os
import warnings

_BACKENDS = ("numba", "numpy")

_active: str | None = None
_modules: dict = {}


def _default_backend() -> str:
    env = os.environ.get("NCLAW_BACKEND", "").strip().lower()
    if env:
        if env not in _BACKENDS:
            raise ValueError(f"NCLAW_BACKEND must be one of {_BACKENDS}, got {env!r}")
        return env
    try:
        importlib.import_module("numba")
        return "numba"
    except ImportError:
        return "numpy"


def active_backend() -> str:
    """Name of the backend currently serving kernel calls."""
    global _active
    if _active is None:
        use_backend(_default_backend())
    return _active


def use_backend(name: str) -> str:
    """Switch the kernel backend. Mainly for tests and benchmarks."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba":
        try:
            importlib.import_module("numba")
        except ImportError:
            warnings.warn("numba not importable, falling back to numpy kernels")
            name = "numpy"
    _active = name
    return _active


def kernels():
    """Module object providing the kernel entry points for the active backend."""
    name = active_backend()
    if name not in _modules:
        _modules[name] = importlib.import_module(f"mpmlaw._kernels_{name}")
    return _modules[name]


def configure_threads() -> None:
    """Apply the NCLAW_THREADS cap to the numba threading layer, if present."""
    raw = os.environ.get("NCLAW_THREADS", "").strip()
    if not raw:
        return
    n = max(1, int(raw))
    try:
        import numba

        numba.set_num_threads(n)
    except (ImportError, ValueError):
        pass
