"""Kernel dispatch: compiled extension if available, numpy fallback otherwise.

Set the environment variable DMPC_PURE_PYTHON=1 before import to force the
fallback (used by the benchmark and for debugging).
"""

import os

from . import _kernels_py

BACKEND = "python"
eval_point = _kernels_py.eval_point
eval_batch = _kernels_py.eval_batch

if not os.environ.get("DMPC_PURE_PYTHON"):
    try:
        from . import _fast

        eval_point = _fast.eval_point
        eval_batch = _fast.eval_batch
        BACKEND = "compiled"
    except ImportError:
        pass
