"""Vectorized numpy implementations of the hot kernels.

Semantics here are the reference: the compiled extension in ``_corek.pyx``
must produce the same results (up to float summation order). All convolutions
are 3x3, stride 1, zero padding 1, NCHW layout; float32 and float64 are
supported and preserved.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C*9, H*W) patch matrix for a 3x3 window."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # windows: (B, C, H, W, 3, 3) -> (B, C*9, H*W) with K ordered (c, ky, kx)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * 9, h * w)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 same-size convolution: x (B,Cin,H,W), w (Cout,Cin,3,3), b (Cout,)."""
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    cols = _im2col3(x)
    out = w.reshape(cout, cin * 9).astype(x.dtype, copy=False) @ cols
    out += b.astype(x.dtype, copy=False)[:, None]
    return out.reshape(bs, cout, h, wd)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    gy_mat = gy.reshape(bs, cout, h * wd)
    cols = _im2col3(x)
    # batched GEMM (B,Cout,P) @ (B,P,K), reduced over the batch
    gw = (gy_mat @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(cout, cin, 3, 3)
    gb = gy.sum(axis=(0, 2, 3))
    # input gradient = convolution of gy with the spatially flipped,
    # channel-transposed kernel (exact for stride 1 / pad 1)
    w_flip = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    gx = conv2d_forward(gy, w_flip, np.zeros(cin, dtype=x.dtype))
    return gx, gw, gb


def blur_separable(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 2D filter with reflect padding on a single (H, W) image."""
    n = kernel.shape[0]
    r = n // 2
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.float64)
    pad = np.pad(img.astype(np.float64), ((0, 0), (r, r)), mode="reflect")
    for i in range(n):
        out += kernel[i] * pad[:, i : i + w]
    pad = np.pad(out, ((r, r), (0, 0)), mode="reflect")
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(n):
        out += kernel[i] * pad[i : i + h, :]
    return out


def label_components(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    """Two-pass union-find labeling of a boolean mask.

    Returns (labels, n) where labels is int32 with 0 for background and
    components numbered 1..n in raster order of their first pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = [0]  # parent[i] for provisional label i; 0 unused

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if connectivity == 4:
        neigh = ((-1, 0), (0, -1))
    else:
        neigh = ((-1, -1), (-1, 0), (-1, 1), (0, -1))
    nxt = 1
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = 0
            for dy, dx in neigh:
                ny, nx_ = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx_ < w and labels[ny, nx_]:
                    root = find(labels[ny, nx_])
                    if best == 0 or root < best:
                        best = root
            if best == 0:
                parent.append(nxt)
                labels[y, x] = nxt
                nxt += 1
            else:
                labels[y, x] = best
                for dy, dx in neigh:
                    ny, nx_ = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx_ < w and labels[ny, nx_]:
                        root = find(labels[ny, nx_])
                        if root != best:
                            parent[root] = best
    # compact labels in raster order of first occurrence
    remap: dict[int, int] = {}
    n = 0
    for y in range(h):
        for x in range(w):
            if labels[y, x]:
                root = find(labels[y, x])
                if root not in remap:
                    n += 1
                    remap[root] = n
                labels[y, x] = remap[root]
    return labels, n
