"""Hot inner loops, compiled when the extension is built.

The Cython module ``_ckernels`` is preferred. If it is missing (no compiler at
install time) or ``POPSIGNAL_PURE=1`` is set, the pure-Python versions in
``_pure`` are used instead. ``BACKEND`` names the active implementation.
"""
import os

from . import _pure

if os.environ.get("POPSIGNAL_PURE", "") not in ("", "0"):
    _impl = _pure
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pure
        BACKEND = "python"

edit_distance = _impl.edit_distance
css_residuals = _impl.css_residuals
ses_sse = _impl.ses_sse

__all__ = ["BACKEND", "edit_distance", "css_residuals", "ses_sse"]
