"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``MAPI_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MAPI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

scatter_add_rows = _impl.scatter_add_rows
segment_softmax = _impl.segment_softmax
segment_softmax_backward = _impl.segment_softmax_backward
spmm = _impl.spmm
spmm_backward = _impl.spmm_backward
knn_positions = _impl.knn_positions
elu_forward = _impl.elu_forward
elu_backward = _impl.elu_backward


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        return out
    out["cython"] = compiled
    return out
