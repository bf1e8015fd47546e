"""Backend selection for the convolution hot loops.

The compiled Cython module is used when it was built; otherwise the numpy
fallback. Setting ``CCAN_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_compiled = None

if os.environ.get("CCAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _compiled = None


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    return _kernels_py


def im2col(x: np.ndarray, kh, kw, sh, sw, ph, pw, out_h, out_w, backend=None) -> np.ndarray:
    x = np.ascontiguousarray(x)
    return _impl(backend).im2col(x, kh, kw, sh, sw, ph, pw, out_h, out_w)


def col2im(cols: np.ndarray, n, c, h, w, kh, kw, sh, sw, ph, pw, out_h, out_w, backend=None) -> np.ndarray:
    cols = np.ascontiguousarray(cols)
    return _impl(backend).col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, out_h, out_w)


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])
