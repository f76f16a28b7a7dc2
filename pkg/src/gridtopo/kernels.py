"""Kernel dispatch: compiled Cython core when importable, numpy fallback otherwise.

Set ``GRIDTOPO_PURE_PYTHON=1`` to force the fallback.
"""
import os

from gridtopo import _kernels_py

if os.environ.get("GRIDTOPO_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from gridtopo import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

floyd_warshall = _impl.floyd_warshall
connected_masks = _impl.connected_masks
rk4_energy = _impl.rk4_energy

__all__ = ["BACKEND", "floyd_warshall", "connected_masks", "rk4_energy"]
