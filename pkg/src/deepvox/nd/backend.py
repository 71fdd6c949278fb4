"""Backend selection for the conv kernels.

The compiled extension is preferred when importable; DEEPVOX_BACKEND
overrides ("numpy" forces the fallback, "compiled" makes a missing
extension a hard error instead of a silent slowdown).
"""

import os

import numpy as np

from . import kernels_np

_requested = os.environ.get("DEEPVOX_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "compiled"):
    raise ValueError(f"DEEPVOX_BACKEND must be 'numpy' or 'compiled', got {_requested!r}")

_ext = None
if _requested != "numpy":
    try:
        from . import _kernels as _ext
    except ImportError:
        _ext = None
if _requested == "compiled" and _ext is None:
    raise ImportError("DEEPVOX_BACKEND=compiled but the extension is not built")

ACTIVE = "compiled" if _ext is not None else "numpy"

out_length = kernels_np.out_length


def _contig(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def conv1d_forward(x, w, b, stride, dilation, impl=None):
    impl = impl or ACTIVE
    dt = np.result_type(x, w)  # mixed f32/f64 follows numpy promotion
    xc, wc = _contig(x, dt), _contig(w, dt)
    bc = _contig(b, dt) if b is not None else None
    if impl == "compiled":
        return _ext.conv1d_forward(xc, wc, bc, stride, dilation)
    return kernels_np.conv1d_forward(xc, wc, bc, stride, dilation)


def conv1d_backward(x, w, g, stride, dilation, need_dx, need_dw, need_db, impl=None):
    impl = impl or ACTIVE
    dt = np.result_type(x, w, g)
    xc, wc, gc = _contig(x, dt), _contig(w, dt), _contig(g, dt)
    if impl == "compiled":
        return _ext.conv1d_backward(xc, wc, gc, stride, dilation,
                                    need_dx, need_dw, need_db)
    return kernels_np.conv1d_backward(xc, wc, gc, stride, dilation,
                                      need_dx, need_dw, need_db)


def available():
    """Names of usable backends (always includes 'numpy')."""
    names = ["numpy"]
    if _ext is not None:
        names.append("compiled")
    return names
