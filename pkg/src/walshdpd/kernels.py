"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``WALSHDPD_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("WALSHDPD_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

_active = compiled if compiled is not None else _fallback

BACKEND = "compiled" if compiled is not None else "python"

fwht_natural = _active.fwht_natural
mempoly = _active.mempoly
