"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``DEXSCAFFOLD_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

if os.environ.get("DEXSCAFFOLD_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl
        BACKEND = "python"

signed_distances = _impl.signed_distances
gae = _impl.gae
zigzag_update = _impl.zigzag_update

SPHERE, BOX, CYLINDER = 0, 1, 2

__all__ = ["BACKEND", "signed_distances", "gae", "zigzag_update", "SPHERE", "BOX", "CYLINDER"]
