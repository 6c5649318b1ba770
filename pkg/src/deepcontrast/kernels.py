"""Backend selection for the hot inner loops.

The compiled extension is used when available; set DEEPCONTRAST_BACKEND=py
to force the pure-python fallback (or =ext to require the extension).
"""

import os

from . import _kernels_py

_forced = os.environ.get("DEEPCONTRAST_BACKEND", "").lower()

if _forced == "py":
    _impl = _kernels_py
    BACKEND = "py"
else:
    try:
        from . import _speedups as _impl
        BACKEND = "ext"
    except ImportError:
        if _forced == "ext":
            raise
        _impl = _kernels_py
        BACKEND = "py"

felz_merge = _impl.felz_merge
appearance_filter = _impl.appearance_filter
