"""Kernel backend selection.

The compiled Cython core is preferred when its extension module imported
successfully; otherwise the numpy reference kernels are used. Setting
OPSDLAB_PURE_PYTHON=1 forces the reference backend regardless. The cached
forward / backward pair always runs through the reference module.
"""

from __future__ import annotations

import os

from . import _reference
from ._reference import (KERNEL_ARG_ORDER, backward, backward_batch,
                         forward_with_cache, forward_with_cache_batch)

if os.environ.get("OPSDLAB_PURE_PYTHON"):
    _impl = _reference
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _reference

BACKEND = "compiled" if _impl is not _reference else "pure"

logits_all = _impl.logits_all
logits_last = _impl.logits_last

__all__ = [
    "BACKEND",
    "KERNEL_ARG_ORDER",
    "backward",
    "backward_batch",
    "forward_with_cache",
    "forward_with_cache_batch",
    "logits_all",
    "logits_last",
]
