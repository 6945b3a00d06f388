"""Likelihood core with backend selection at import time.

Prefers the compiled Cython extension; falls back to the numpy
implementation when the extension is unavailable or when the
``METOCAL_PURE_PYTHON`` environment variable is set (useful for debugging
and for the backend benchmark).
"""

import os

if os.environ.get("METOCAL_PURE_PYTHON"):
    from . import _pyfallback as _impl
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pyfallback as _impl

BACKEND = _impl.BACKEND
gaussian_nll = _impl.gaussian_nll
fit_gaussian_nm = _impl.fit_gaussian_nm

__all__ = ["BACKEND", "gaussian_nll", "fit_gaussian_nm"]
