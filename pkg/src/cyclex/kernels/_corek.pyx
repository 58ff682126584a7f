# Compiled versions of the hot kernels: 3x3 conv forward/backward for the
# denoiser, separable blur and connected-component labeling for the frame
# pipeline. Semantics mirror kernels/fallback.py exactly (modulo float
# summation order). Conv kernels are dtype-generic over float32/float64.

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel import prange

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _conv_rows(real[:, :, :, ::1] xp, real[:, :, :, ::1] w, real[::1] b,
                     real[:, :, :, ::1] out, Py_ssize_t bs, Py_ssize_t cin,
                     Py_ssize_t cout, Py_ssize_t h, Py_ssize_t wd) noexcept nogil:
    cdef Py_ssize_t bc, bi, co, ci, y, xx, ky, kx
    cdef real ws
    cdef real* orow
    cdef real* xrow
    for bc in prange(bs * cout, schedule="static", num_threads=2):
        bi = bc // cout
        co = bc % cout
        for y in range(h):
            orow = &out[bi, co, y, 0]
            for xx in range(wd):
                orow[xx] = b[co]
            for ci in range(cin):
                for ky in range(3):
                    xrow = &xp[bi, ci, y + ky, 0]
                    for kx in range(3):
                        ws = w[co, ci, ky, kx]
                        for xx in range(wd):
                            orow[xx] = orow[xx] + ws * xrow[xx + kx]


def conv2d_forward(x_arr, w_arr, b_arr):
    """3x3 same-size convolution: x (B,Cin,H,W), w (Cout,Cin,3,3), b (Cout,)."""
    dt = x_arr.dtype
    x_arr = np.ascontiguousarray(x_arr)
    w_arr = np.ascontiguousarray(w_arr, dtype=dt)
    b_arr = np.ascontiguousarray(b_arr, dtype=dt)
    cdef Py_ssize_t bs = x_arr.shape[0], cin = x_arr.shape[1]
    cdef Py_ssize_t h = x_arr.shape[2], wd = x_arr.shape[3]
    cdef Py_ssize_t cout = w_arr.shape[0]
    xp_arr = np.zeros((bs, cin, h + 2, wd + 2), dtype=dt)
    xp_arr[:, :, 1:-1, 1:-1] = x_arr
    out_arr = np.empty((bs, cout, h, wd), dtype=dt)
    if dt == np.float64:
        _conv_rows[double](xp_arr, w_arr, b_arr, out_arr, bs, cin, cout, h, wd)
    elif dt == np.float32:
        _conv_rows[float](xp_arr, w_arr, b_arr, out_arr, bs, cin, cout, h, wd)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return out_arr


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _conv_gx(real[:, :, :, ::1] gyp, real[:, :, :, ::1] w,
                   real[:, :, :, ::1] gx, Py_ssize_t bs, Py_ssize_t cin,
                   Py_ssize_t cout, Py_ssize_t h, Py_ssize_t wd) noexcept nogil:
    cdef Py_ssize_t bc, bi, ci, co, y, xx, ky, kx
    cdef real ws
    cdef real* grow
    cdef real* yrow
    for bc in prange(bs * cin, schedule="static", num_threads=2):
        bi = bc // cin
        ci = bc % cin
        for y in range(h):
            grow = &gx[bi, ci, y, 0]
            for xx in range(wd):
                grow[xx] = 0.0
            for co in range(cout):
                for ky in range(3):
                    yrow = &gyp[bi, co, y + ky, 0]
                    for kx in range(3):
                        ws = w[co, ci, 2 - ky, 2 - kx]
                        for xx in range(wd):
                            grow[xx] = grow[xx] + ws * yrow[xx + kx]


cdef inline double _dot_shift(real* a, real* b, Py_ssize_t n) noexcept nogil:
    # four partial sums so gcc can vectorize the reduction
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return s0 + s1 + s2 + s3


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _conv_gw(real[:, :, :, ::1] xp, real[:, :, :, ::1] gy,
                   real[:, :, :, ::1] gw, Py_ssize_t bs, Py_ssize_t cin,
                   Py_ssize_t cout, Py_ssize_t h, Py_ssize_t wd) noexcept nogil:
    cdef Py_ssize_t cc, co, ci, bi, y
    # scalar accumulators: prange does not privatize C arrays
    cdef double a0, a1, a2, a3, a4, a5, a6, a7, a8
    cdef real* yrow
    cdef real* x0
    cdef real* x1
    cdef real* x2
    for cc in prange(cout * cin, schedule="static", num_threads=2):
        co = cc // cin
        ci = cc % cin
        a0 = 0.0; a1 = 0.0; a2 = 0.0
        a3 = 0.0; a4 = 0.0; a5 = 0.0
        a6 = 0.0; a7 = 0.0; a8 = 0.0
        for bi in range(bs):
            for y in range(h):
                yrow = &gy[bi, co, y, 0]
                x0 = &xp[bi, ci, y, 0]
                x1 = &xp[bi, ci, y + 1, 0]
                x2 = &xp[bi, ci, y + 2, 0]
                a0 = a0 + _dot_shift(yrow, x0, wd)
                a1 = a1 + _dot_shift(yrow, x0 + 1, wd)
                a2 = a2 + _dot_shift(yrow, x0 + 2, wd)
                a3 = a3 + _dot_shift(yrow, x1, wd)
                a4 = a4 + _dot_shift(yrow, x1 + 1, wd)
                a5 = a5 + _dot_shift(yrow, x1 + 2, wd)
                a6 = a6 + _dot_shift(yrow, x2, wd)
                a7 = a7 + _dot_shift(yrow, x2 + 1, wd)
                a8 = a8 + _dot_shift(yrow, x2 + 2, wd)
        gw[co, ci, 0, 0] = <real> a0
        gw[co, ci, 0, 1] = <real> a1
        gw[co, ci, 0, 2] = <real> a2
        gw[co, ci, 1, 0] = <real> a3
        gw[co, ci, 1, 1] = <real> a4
        gw[co, ci, 1, 2] = <real> a5
        gw[co, ci, 2, 0] = <real> a6
        gw[co, ci, 2, 1] = <real> a7
        gw[co, ci, 2, 2] = <real> a8


def conv2d_backward(x_arr, w_arr, gy_arr):
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    dt = x_arr.dtype
    x_arr = np.ascontiguousarray(x_arr)
    w_arr = np.ascontiguousarray(w_arr, dtype=dt)
    gy_arr = np.ascontiguousarray(gy_arr, dtype=dt)
    cdef Py_ssize_t bs = x_arr.shape[0], cin = x_arr.shape[1]
    cdef Py_ssize_t h = x_arr.shape[2], wd = x_arr.shape[3]
    cdef Py_ssize_t cout = w_arr.shape[0]
    xp_arr = np.zeros((bs, cin, h + 2, wd + 2), dtype=dt)
    xp_arr[:, :, 1:-1, 1:-1] = x_arr
    gyp_arr = np.zeros((bs, cout, h + 2, wd + 2), dtype=dt)
    gyp_arr[:, :, 1:-1, 1:-1] = gy_arr
    gx_arr = np.empty((bs, cin, h, wd), dtype=dt)
    gw_arr = np.zeros((cout, cin, 3, 3), dtype=dt)
    if dt == np.float64:
        _conv_gx[double](gyp_arr, w_arr, gx_arr, bs, cin, cout, h, wd)
        _conv_gw[double](xp_arr, gy_arr, gw_arr, bs, cin, cout, h, wd)
    elif dt == np.float32:
        _conv_gx[float](gyp_arr, w_arr, gx_arr, bs, cin, cout, h, wd)
        _conv_gw[float](xp_arr, gy_arr, gw_arr, bs, cin, cout, h, wd)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    gb_arr = gy_arr.sum(axis=(0, 2, 3))
    return gx_arr, gw_arr, gb_arr


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    # numpy 'reflect' mode (no edge repeat): -1 -> 1, n -> n-2
    if i < 0:
        i = -i
    if i >= n:
        i = 2 * n - 2 - i
    return i


def blur_separable(img_arr, kernel_arr):
    """Separable 2D filter with reflect padding on a single (H, W) image."""
    cdef double[:, ::1] img = np.ascontiguousarray(img_arr, dtype=np.float64)
    cdef double[::1] k = np.ascontiguousarray(kernel_arr, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], n = k.shape[0]
    cdef Py_ssize_t r = n // 2
    tmp_arr = np.zeros((h, w), dtype=np.float64)
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, i
    cdef double acc
    with nogil:
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for i in range(n):
                    acc += k[i] * img[y, _reflect(x + i - r, w)]
                tmp[y, x] = acc
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for i in range(n):
                    acc += k[i] * tmp[_reflect(y + i - r, h), x]
                out[y, x] = acc
    return out_arr


def label_components(mask_arr, int connectivity):
    """Two-pass union-find labeling; labels numbered in raster order."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    cdef cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(mask_arr, dtype=np.uint8)
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] labels = labels_arr
    parent_arr = np.zeros(h * w + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr
    remap_arr = np.zeros(h * w + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] remap = remap_arr

    cdef int ndirs = 2 if connectivity == 4 else 4
    cdef Py_ssize_t[4] dys
    cdef Py_ssize_t[4] dxs
    if connectivity == 4:
        dys[0] = -1; dxs[0] = 0
        dys[1] = 0;  dxs[1] = -1
    else:
        dys[0] = -1; dxs[0] = -1
        dys[1] = -1; dxs[1] = 0
        dys[2] = -1; dxs[2] = 1
        dys[3] = 0;  dxs[3] = -1

    cdef Py_ssize_t y, x, d, ny, nx
    cdef cnp.int32_t nxt = 1, best, root, lab
    cdef Py_ssize_t n = 0
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = 0
            for d in range(ndirs):
                ny = y + dys[d]
                nx = x + dxs[d]
                if 0 <= ny < h and 0 <= nx < w and labels[ny, nx]:
                    root = labels[ny, nx]
                    while parent[root] != root:
                        parent[root] = parent[parent[root]]
                        root = parent[root]
                    if best == 0 or root < best:
                        best = root
            if best == 0:
                parent[nxt] = nxt
                labels[y, x] = nxt
                nxt += 1
            else:
                labels[y, x] = best
                for d in range(ndirs):
                    ny = y + dys[d]
                    nx = x + dxs[d]
                    if 0 <= ny < h and 0 <= nx < w and labels[ny, nx]:
                        root = labels[ny, nx]
                        while parent[root] != root:
                            parent[root] = parent[parent[root]]
                            root = parent[root]
                        if root != best:
                            parent[root] = best
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab:
                root = lab
                while parent[root] != root:
                    root = parent[root]
                if remap[root] == 0:
                    n += 1
                    remap[root] = <cnp.int32_t> n
                labels[y, x] = remap[root]
    return labels_arr, int(n)
