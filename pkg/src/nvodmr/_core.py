"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_pykernels`` is used. Setting ``NVODMR_PURE_PYTHON=1``
forces the fallback.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

if os.environ.get("NVODMR_PURE_PYTHON", "") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

eigh3_batch = _impl.eigh3_batch
lowpass_cascade = _impl.lowpass_cascade
render_separable = _impl.render_separable


def backends():
    """Return ``{name: module}`` for every kernel backend importable here."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
