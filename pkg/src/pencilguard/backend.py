"""Kernel selection: compiled Cython loops when available, numpy otherwise.

Set ``PENCIL_GUARD_BACKEND=python`` or ``=cython`` to force a choice; the
default prefers the compiled module and silently falls back to the pure
implementation when the extension was not built.
"""

import os

from . import _qz_python
from .exceptions import PencilGuardError

try:
    from . import _qz_cython
except ImportError:
    _qz_cython = None

_FORCED = os.environ.get("PENCIL_GUARD_BACKEND", "").strip().lower()
if _FORCED == "python":
    _impl = _qz_python
elif _FORCED == "cython":
    if _qz_cython is None:
        raise PencilGuardError(
            "PENCIL_GUARD_BACKEND=cython but the compiled kernel is missing"
        )
    _impl = _qz_cython
elif _FORCED == "":
    _impl = _qz_cython if _qz_cython is not None else _qz_python
else:
    raise PencilGuardError(f"unknown backend {_FORCED!r}")

BACKEND = _impl.BACKEND_NAME
hessenberg_triangular = _impl.hessenberg_triangular
qz_iterate = _impl.qz_iterate


def available_backends():
    out = {"python": _qz_python}
    if _qz_cython is not None:
        out["cython"] = _qz_cython
    return out
