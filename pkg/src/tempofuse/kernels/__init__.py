"""Hot per-pixel kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``TEMPOFUSE_DISABLE_NUMBA`` is set to a non-empty value other
than ``0``.  Both paths are importable directly as ``_jit`` and ``_np``.
"""
import os

from . import _np

_disabled = os.environ.get("TEMPOFUSE_DISABLE_NUMBA", "") not in ("", "0")

if _disabled:
    _impl = _np
    BACKEND = "numpy"
else:
    try:
        from . import _jit as _impl
        BACKEND = "numba"
    except ImportError:  # numba missing or broken
        _impl = _np
        BACKEND = "numpy"

census_transform = _impl.census_transform
hamming = _impl.hamming
stereo_cost_volume = _impl.stereo_cost_volume
patch_match = _impl.patch_match
zbuffer_winners = _impl.zbuffer_winners

__all__ = ["BACKEND", "census_transform", "hamming", "stereo_cost_volume",
           "patch_match", "zbuffer_winners"]
