"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementations take over. Set ``BLOCKAMP_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _pykernels
from ._pykernels import mix64

if os.environ.get("BLOCKAMP_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

sqrt_fanout = _impl.sqrt_fanout
monitor_hits = _impl.monitor_hits
kde_grid = _impl.kde_grid
burst_windows = _impl.burst_windows


def stream_key(seed, *labels):
    """Derive a 64-bit RNG key from a seed and integer stream labels."""
    key = mix64(seed)
    for label in labels:
        key = mix64(key ^ (label & 0xFFFFFFFFFFFFFFFF))
    return key


__all__ = ["BACKEND", "sqrt_fanout", "monitor_hits", "kde_grid", "burst_windows",
           "stream_key", "mix64"]
