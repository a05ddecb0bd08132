"""Kernel backend selection.

The compiled extension is used when it imports; setting
``QGRAPHON_PURE=1`` forces the numpy fallback. ``BACKENDS`` lists every
backend that is importable, whichever one is active.
"""

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}
try:
    from . import _ckernels

    BACKENDS["cython"] = _ckernels
except ImportError:  # pragma: no cover - depends on the build
    pass

if "cython" in BACKENDS and os.environ.get("QGRAPHON_PURE", "") != "1":
    BACKEND = "cython"
else:
    BACKEND = "python"
_impl = BACKENDS[BACKEND]

cut_norm_enum = _impl.cut_norm_enum
op_norm_enum = _impl.op_norm_enum
cut_norm_alternating = _impl.cut_norm_alternating
