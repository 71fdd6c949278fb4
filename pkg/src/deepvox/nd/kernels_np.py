"""Pure numpy conv1d kernels (fallback backend).

Convolution here is cross-correlation (no kernel flip), matching the
compiled backend.  Both passes lower the dilated convolution onto one
large matmul over an im2col panel; the panel is a strided view of the
input until the reshape materializes it.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_length(length, kernel_size, stride, dilation):
    extent = (kernel_size - 1) * dilation + 1
    if extent > length:
        raise ValueError(
            f"kernel extent {extent} (size {kernel_size}, dilation {dilation}) "
            f"exceeds input length {length}"
        )
    return (length - extent) // stride + 1


def _cols(x, kernel_size, stride, dilation):
    """im2col panel [N*L_out, C*K] with cols[n*L_out+t, c*K+k] = x[n, c, k*d+t*s]."""
    n, c, length = x.shape
    extent = (kernel_size - 1) * dilation + 1
    v = sliding_window_view(x, extent, axis=2)[:, :, ::stride, ::dilation]
    l_out = v.shape[2]
    return v.transpose(0, 2, 1, 3).reshape(n * l_out, c * kernel_size), l_out


def conv1d_forward(x, w, b, stride, dilation):
    """x: [N,C,L], w: [O,C,K], b: [O] or None -> [N,O,L_out]."""
    n, c, length = x.shape
    o, _, k = w.shape
    l_out = out_length(length, k, stride, dilation)
    cols, _ = _cols(x, k, stride, dilation)
    out = cols @ w.reshape(o, c * k).T
    if b is not None:
        out += b
    return np.ascontiguousarray(out.reshape(n, l_out, o).transpose(0, 2, 1))


def conv1d_backward(x, w, g, stride, dilation, need_dx, need_dw, need_db):
    """Gradients for conv1d_forward.  g: [N,O,L_out]."""
    n, c, length = x.shape
    o, _, k = w.shape
    l_out = g.shape[2]
    span = (l_out - 1) * stride + 1
    g2 = g.transpose(0, 2, 1).reshape(n * l_out, o)
    db = g.sum(axis=(0, 2)) if need_db else None
    dw = None
    if need_dw:
        cols, _ = _cols(x, k, stride, dilation)
        dw = (g2.T @ cols).reshape(o, c, k)
    dx = None
    if need_dx:
        dx = np.zeros_like(x)
        dcols = (g2 @ w.reshape(o, c * k)).reshape(n, l_out, c, k)
        for tap in range(k):
            lo = tap * dilation
            dx[:, :, lo : lo + span : stride] += dcols[:, :, :, tap].transpose(0, 2, 1)
    return dx, dw, db
