# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled conv1d kernels.

Each pass lowers the dilated convolution to one large GEMM: an im2col
gather rearranges the input into a [N*T_out, C*K] panel, BLAS does the
contraction, and a final pass folds bias / transposes back.  Gather and
scatter loops are parallel over the batch axis with each thread owning
disjoint rows, and every output element is accumulated in a fixed order,
so results are bit-identical run to run regardless of thread count.
"""

import numpy as np

from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused floating:
    float
    double


cdef void _rm_gemm(bint ta, bint tb, int m, int n, int k, floating *a, int lda,
                   floating *b, int ldb, floating *c, int ldc) noexcept nogil:
    """Row-major C[m,n] = op(A) @ op(B) on top of Fortran BLAS.

    Computing C^T = op(B)^T op(A)^T in column-major lands the result in
    row-major C; lda/ldb/ldc are row-major leading dimensions (row lengths
    of the stored arrays).
    """
    cdef char fa = b'T' if ta else b'N'
    cdef char fb = b'T' if tb else b'N'
    cdef floating one = 1
    cdef floating zero = 0
    if m == 0 or n == 0:
        return
    if floating is float:
        sgemm(&fb, &fa, &n, &m, &k, &one, b, &ldb, a, &lda, &zero, c, &ldc)
    else:
        dgemm(&fb, &fa, &n, &m, &k, &one, b, &ldb, a, &lda, &zero, c, &ldc)


cdef Py_ssize_t _out_length(Py_ssize_t length, Py_ssize_t k, Py_ssize_t stride,
                            Py_ssize_t dilation) except -1:
    cdef Py_ssize_t extent = (k - 1) * dilation + 1
    if extent > length:
        raise ValueError(f"kernel extent {extent} exceeds input length {length}")
    return (length - extent) // stride + 1


cdef void _im2col(floating[:, :, ::1] x, floating[:, ::1] cols,
                  Py_ssize_t lo_, Py_ssize_t k_, Py_ssize_t stride,
                  Py_ssize_t dilation) noexcept nogil:
    """cols[n*Lo + t, c*K + k] = x[n, c, k*dilation + t*stride]"""
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t n, c, k, t, row
    for n in prange(N, schedule="static"):
        for t in range(lo_):
            row = n * lo_ + t
            for c in range(C):
                for k in range(k_):
                    cols[row, c * k_ + k] = x[n, c, k * dilation + t * stride]


def conv1d_forward(floating[:, :, ::1] x, floating[:, :, ::1] w, bias,
                   Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t L = x.shape[2]
    cdef Py_ssize_t O = w.shape[0]
    cdef Py_ssize_t K = w.shape[2]
    if w.shape[1] != C:
        raise ValueError(f"channel mismatch: input has {C}, weights expect {w.shape[1]}")
    cdef Py_ssize_t Lo = _out_length(L, K, stride, dilation)

    dtype = np.float32 if floating is float else np.float64
    cols_arr = np.empty((N * Lo, C * K), dtype=dtype)
    nto_arr = np.empty((N * Lo, O), dtype=dtype)
    out_arr = np.empty((N, O, Lo), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef floating[:, ::1] nto = nto_arr
    cdef floating[:, :, ::1] out = out_arr

    cdef bint has_b = bias is not None
    cdef floating[::1] bv = bias if has_b else None

    cdef Py_ssize_t n, o, t
    with nogil:
        _im2col(x, cols, Lo, K, stride, dilation)
        # [NT, O] = cols [NT, CK] @ w2d^T (w stored [O, CK] row-major)
        _rm_gemm(False, True, <int> (N * Lo), <int> O, <int> (C * K),
                 &cols[0, 0], <int> (C * K), &w[0, 0, 0], <int> (C * K),
                 &nto[0, 0], <int> O)
        for n in prange(N, schedule="static"):
            for t in range(Lo):
                for o in range(O):
                    out[n, o, t] = nto[n * Lo + t, o] + (bv[o] if has_b else <floating> 0)
    return out_arr


def conv1d_backward(floating[:, :, ::1] x, floating[:, :, ::1] w,
                    floating[:, :, ::1] g, Py_ssize_t stride, Py_ssize_t dilation,
                    bint need_dx, bint need_dw, bint need_db):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t L = x.shape[2]
    cdef Py_ssize_t O = w.shape[0]
    cdef Py_ssize_t K = w.shape[2]
    cdef Py_ssize_t Lo = g.shape[2]

    dtype = np.float32 if floating is float else np.float64

    gt_arr = np.empty((N * Lo, O), dtype=dtype)
    cdef floating[:, ::1] gt = gt_arr

    dx_arr = np.zeros((N, C, L), dtype=dtype) if need_dx else None
    dw_arr = np.empty((O, C, K), dtype=dtype) if need_dw else None
    db_arr = np.zeros(O, dtype=dtype) if need_db else None
    cols_arr = np.empty((N * Lo, C * K), dtype=dtype) if need_dw else None
    dcols_arr = np.empty((N * Lo, C * K), dtype=dtype) if need_dx else None

    cdef floating[:, :, ::1] dx = dx_arr if need_dx else None
    cdef floating[:, :, ::1] dw = dw_arr if need_dw else None
    cdef floating[::1] db = db_arr if need_db else None
    cdef floating[:, ::1] cols = cols_arr if need_dw else None
    cdef floating[:, ::1] dcols = dcols_arr if need_dx else None

    cdef Py_ssize_t n, o, c, k, t, row
    cdef floating acc

    with nogil:
        for n in prange(N, schedule="static"):
            for t in range(Lo):
                for o in range(O):
                    gt[n * Lo + t, o] = g[n, o, t]
        if need_db:
            for o in prange(O, schedule="static"):
                acc = 0
                for n in range(N):
                    for t in range(Lo):
                        acc = acc + g[n, o, t]
                db[o] = acc
        if need_dw:
            _im2col(x, cols, Lo, K, stride, dilation)
            # dw2d [O, CK] = gt^T [O, NT] @ cols [NT, CK]
            _rm_gemm(True, False, <int> O, <int> (C * K), <int> (N * Lo),
                     &gt[0, 0], <int> O, &cols[0, 0], <int> (C * K),
                     &dw[0, 0, 0], <int> (C * K))
        if need_dx:
            # dcols [NT, CK] = gt [NT, O] @ w2d [O, CK]
            _rm_gemm(False, False, <int> (N * Lo), <int> (C * K), <int> O,
                     &gt[0, 0], <int> O, &w[0, 0, 0], <int> (C * K),
                     &dcols[0, 0], <int> (C * K))
            for n in prange(N, schedule="static"):
                for t in range(Lo):
                    row = n * Lo + t
                    for c in range(C):
                        for k in range(K):
                            dx[n, c, k * dilation + t * stride] += dcols[row, c * K + k]

    return dx_arr, dw_arr, db_arr
