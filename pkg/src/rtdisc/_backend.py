"""Kernel backend selection.

The compiled extension is used when importable; ``RTDISC_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import logging
import os

from . import _reference


def _select():
    if os.environ.get("RTDISC_BACKEND", "").lower() in ("python", "numpy"):
        return _reference
    try:
        from . import _kernels
    except ImportError as exc:
        logging.getLogger(__name__).warning("compiled kernels unavailable (%s); using numpy fallback", exc)
        return _reference
    return _kernels


kernels = _select()
BACKEND = kernels.NAME
