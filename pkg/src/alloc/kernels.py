"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy reference
implementation. Set ``ALLOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

python = _pykernels
compiled = None

if os.environ.get("ALLOC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as compiled
        _impl = compiled
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
resolve_rounds = _impl.resolve_rounds
resolve_vanilla = _impl.resolve_vanilla
predicted_means = _impl.predicted_means
enumerate_offline = _impl.enumerate_offline
