"""Backend selection for the hot inner loops.

The compiled extension is used when it was built; set ``FAIRFLOW_PURE=1`` to
force the pure-Python fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("FAIRFLOW_PURE"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

successive_shortest_paths = _impl.successive_shortest_paths
theta = _impl.theta

__all__ = ["BACKEND", "successive_shortest_paths", "theta"]
