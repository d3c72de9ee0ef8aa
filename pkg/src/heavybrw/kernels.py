"""Backend selection for the generation kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. ``HEAVYBRW_PURE=1`` forces the fallback.
"""

import os
from types import ModuleType

from heavybrw import _fallback

try:
    from heavybrw import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if _compiled is not None and not os.environ.get("HEAVYBRW_PURE"):
    DEFAULT = "cython"
else:
    DEFAULT = "python"


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module called ``name`` (default: the selected one)."""
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
