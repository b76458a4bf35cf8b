"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when importable; otherwise the
numpy implementation in ``_kernels_py`` is used.  Set ``ADOPTNET_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("ADOPTNET_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
rollout = _impl.rollout
fixed_point = _impl.fixed_point
horizon_cost_grad = _impl.horizon_cost_grad
project_rows = _impl.project_rows

__all__ = ["BACKEND", "rollout", "fixed_point", "horizon_cost_grad", "project_rows"]
