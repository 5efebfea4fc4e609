"""Selects the compiled dynamics kernels when available.

Set ``SGODE_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("SGODE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

heat = backend.heat
mutualistic = backend.mutualistic
gene = backend.gene
