"""Hot-kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy fallback in ``_pykernels`` is used. Set ``RAWDISTILL_PURE_PYTHON=1`` to
force the fallback. Both backends return bit-identical arrays.
"""

import os

from . import _pykernels as python_backend

if os.environ.get("RAWDISTILL_PURE_PYTHON", "") not in ("", "0"):
    compiled_backend = None
else:
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = backend.NAME

im2col = backend.im2col
col2im = backend.col2im
maxpool2_forward = backend.maxpool2_forward
maxpool2_backward = backend.maxpool2_backward
bilinear_fill = backend.bilinear_fill

__all__ = [
    "BACKEND",
    "backend",
    "python_backend",
    "compiled_backend",
    "im2col",
    "col2im",
    "maxpool2_forward",
    "maxpool2_backward",
    "bilinear_fill",
]
