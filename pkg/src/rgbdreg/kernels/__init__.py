"""Hot kernels with a compiled core and a pure-numpy fallback.

The Cython extension is preferred when importable; set RGBDREG_KERNELS=numpy
to force the fallback. Both backends implement identical contracts,
including index ordering and accumulation order.
"""

import os

from . import _numpy

_impl = _numpy
BACKEND = "numpy"

if os.environ.get("RGBDREG_KERNELS", "").lower() not in ("numpy", "python"):
    try:
        from . import _ext  # compiled at install time; optional

        _impl = _ext
        BACKEND = "ext"
    except ImportError:
        pass

voxel_subsample = _impl.voxel_subsample
radius_all = _impl.radius_all
radius_knn = _impl.radius_knn
splat_forward = _impl.splat_forward
splat_backward = _impl.splat_backward

__all__ = [
    "BACKEND",
    "voxel_subsample",
    "radius_all",
    "radius_knn",
    "splat_forward",
    "splat_backward",
]
