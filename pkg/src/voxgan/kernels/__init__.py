"""Hot inner loops with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time. Set ``VOXGAN_DISABLE_NUMBA=1`` to
force the numpy path (also used automatically when numba is not installed).
Both backends expose the same functions; ``numpy_impl`` and ``numba_impl``
give direct access for tests and benchmarks.
"""

from __future__ import annotations

import os

from . import _numpy as numpy_impl

ENV_FLAG = "VOXGAN_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


numba_impl = None
try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

if numba_impl is not None and _numba_requested():
    BACKEND = "numba"
    _impl = numba_impl
else:
    BACKEND = "numpy"
    _impl = numpy_impl

im2col = _impl.im2col
col2im = _impl.col2im
label_components = _impl.label_components
best_alignment = _impl.best_alignment
svm_dual_cd = _impl.svm_dual_cd

__all__ = [
    "BACKEND",
    "ENV_FLAG",
    "best_alignment",
    "col2im",
    "im2col",
    "label_components",
    "numba_impl",
    "numpy_impl",
    "svm_dual_cd",
]
