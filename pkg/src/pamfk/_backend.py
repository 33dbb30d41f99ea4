"""Select the pair-sum implementation at import time.

The compiled ``_pairsum`` extension is preferred. Setting the environment
variable ``PAMFK_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _pairsum_py

if os.environ.get("PAMFK_BACKEND", "").lower() == "python":
    _impl = _pairsum_py
    BACKEND = "python"
else:
    try:
        from . import _pairsum as _impl
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pairsum_py
        BACKEND = "python"

tri_sum_batch = _impl.tri_sum_batch
rect_sum_batch = _impl.rect_sum_batch
