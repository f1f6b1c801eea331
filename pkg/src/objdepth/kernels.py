"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
reference kernels are used.  Set ``OBJDEPTH_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

if os.environ.get("OBJDEPTH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
warp_sample = _impl.warp_sample
ray_box_depth = _impl.ray_box_depth
splat = _impl.splat
