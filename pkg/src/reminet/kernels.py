"""Kernel backend selection.

The compiled extension is preferred; set ``REMI_PURE_PYTHON=1`` to force the
numpy fallback (used by the benchmark and the backend-equivalence tests).
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("REMI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

pair_message_forward = _impl.pair_message_forward
pair_message_backward = _impl.pair_message_backward
pairwise_l1_forward = _impl.pairwise_l1_forward
pairwise_l1_backward = _impl.pairwise_l1_backward

__all__ = [
    "BACKEND",
    "pair_message_forward",
    "pair_message_backward",
    "pairwise_l1_forward",
    "pairwise_l1_backward",
]
