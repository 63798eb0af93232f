"""Hot kernels: compiled when available, numpy otherwise.

Set ``OTDD_NO_EXT=1`` before import to force the numpy fallback.
``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels as python

compiled = None
if not os.environ.get("OTDD_NO_EXT"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "numpy"

softmin_rows = _impl.softmin_rows
softmin_cols = _impl.softmin_cols
plan_from_potentials = _impl.plan_from_potentials
assemble_cost = _impl.assemble_cost

__all__ = ["BACKEND", "compiled", "python", "softmin_rows", "softmin_cols", "plan_from_potentials", "assemble_cost"]
