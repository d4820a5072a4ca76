"""Select the trajectory sampler: compiled ``_core`` if built, else numpy.

``DOBRUSHIN_BACKEND=python`` forces the numpy implementation.
"""

import os

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = {"python": _fallback}
if _core is not None:
    BACKENDS["cython"] = _core

if os.environ.get("DOBRUSHIN_BACKEND", "").lower() == "python" or _core is None:
    DEFAULT = "python"
else:
    DEFAULT = "cython"


def get(name: str | None = None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
