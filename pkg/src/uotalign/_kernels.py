"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``UOTALIGN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("UOTALIGN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

dtw_accumulate = _impl.dtw_accumulate
dtw_backtrack = _impl.dtw_backtrack
sinkhorn_potentials = _impl.sinkhorn_potentials
sinkhorn_scaling = _impl.sinkhorn_scaling

__all__ = ["BACKEND", "dtw_accumulate", "dtw_backtrack", "sinkhorn_potentials", "sinkhorn_scaling"]
