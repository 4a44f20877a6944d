"""Hot loops, compiled with numba when available.

Set ``BRIDGELAB_DISABLE_NUMBA=1`` to force the pure-numpy versions. Both
backends sum in a fixed order, so each is bit-stable run to run and
independent of the thread count.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("BRIDGELAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

BACKEND = "numpy"
if not _DISABLED:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:  # numba missing or broken
        _impl = None
if BACKEND == "numpy":
    from . import _numpy as _impl  # noqa: F811

gram = _impl.gram
rowdots = _impl.rowdots
sample_sequences = _impl.sample_sequences
seq_grad = _impl.seq_grad
softmax = _impl.softmax

__all__ = ["BACKEND", "gram", "rowdots", "sample_sequences", "seq_grad", "softmax"]
