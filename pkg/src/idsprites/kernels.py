"""Backend selection for the raster kernels.

The compiled extension is used when it imports; otherwise the numpy versions
are used. Set ``IDSPRITES_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("IDSPRITES_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

raster_fill = _impl.raster_fill
warp_pixel = _impl.warp_pixel
warp_batch_pixel = _impl.warp_batch_pixel
warp_grad_pixel = _impl.warp_grad_pixel
