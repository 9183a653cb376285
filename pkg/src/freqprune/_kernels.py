"""numba kernels moving data between NCHW tensors and the banded layout.

The banded layout is ``(channel, coefficient, position)`` with channels
already in plan order; positions run over ``(image, block-row, block-col)``.
The forward kernel fuses the gather with the truncated DCT and the inverse
kernel fuses the truncated IDCT with the scatter, so each touches the
spatial tensor once.  Spatial edges that do not fill a whole macroblock read
as zero and are cropped on the way back.  Kernels are compiled once per
macroblock size so the pixel loops have constant trip counts.
"""

from functools import lru_cache

import numba
import numpy as np


@lru_cache(maxsize=None)
def layout_kernels(k: int):
    K = int(k)
    KK = K * K

    @numba.njit(nogil=True, fastmath=False)
    def dct_gather(x, perm, m, basis, y):
        n, _, H, W = x.shape
        bh = (H + K - 1) // K
        bw = (W + K - 1) // K
        p = bh * bw
        cols = n * p
        pix = np.empty((KK, cols), dtype=y.dtype)
        for ci in range(perm.shape[0]):
            mc = m[ci]
            if mc == 0:
                continue
            src = perm[ci]
            for b in range(n):
                for bi in range(bh):
                    for i in range(K):
                        r = bi * K + i
                        for j in range(K):
                            row = pix[i * K + j]
                            base = b * p + bi * bw
                            for bj in range(bw):
                                s = bj * K + j
                                if r < H and s < W:
                                    row[base + bj] = x[b, src, r, s]
                                else:
                                    row[base + bj] = 0.0
            for q in range(mc):
                out = y[ci, q]
                coef = basis[q, 0]
                src_row = pix[0]
                for t in range(cols):
                    out[t] = coef * src_row[t]
                for e in range(1, KK):
                    coef = basis[q, e]
                    src_row = pix[e]
                    for t in range(cols):
                        out[t] += coef * src_row[t]

    @numba.njit(nogil=True, fastmath=False)
    def idct_scatter(y, perm, m, basis, out):
        n, _, H, W = out.shape
        bh = (H + K - 1) // K
        bw = (W + K - 1) // K
        p = bh * bw
        cols = n * p
        pix = np.empty((KK, cols), dtype=y.dtype)
        for ci in range(perm.shape[0]):
            mc = m[ci]
            dst = perm[ci]
            for e in range(KK):
                row = pix[e]
                if mc == 0:
                    row[:] = 0.0
                    continue
                coef = basis[0, e]
                src_row = y[ci, 0]
                for t in range(cols):
                    row[t] = coef * src_row[t]
                for q in range(1, mc):
                    coef = basis[q, e]
                    src_row = y[ci, q]
                    for t in range(cols):
                        row[t] += coef * src_row[t]
            for b in range(n):
                for bi in range(bh):
                    for i in range(K):
                        r = bi * K + i
                        if r >= H:
                            break
                        for j in range(K):
                            row = pix[i * K + j]
                            base = b * p + bi * bw
                            for bj in range(bw):
                                s = bj * K + j
                                if s < W:
                                    out[b, dst, r, s] = row[base + bj]

    return dct_gather, idct_scatter


@numba.njit(nogil=True, cache=True)
def depthwise_forward(xp, w, stride, out):
    n, c, ho, wo = out.shape
    kh, kw = w.shape[1], w.shape[2]
    for b in range(n):
        for ch in range(c):
            o = out[b, ch]
            o[:, :] = 0.0
            for di in range(kh):
                for dj in range(kw):
                    wv = w[ch, di, dj]
                    for i in range(ho):
                        src = xp[b, ch, i * stride + di]
                        row = o[i]
                        for j in range(wo):
                            row[j] += wv * src[j * stride + dj]


@numba.njit(nogil=True, cache=True)
def depthwise_backward(xp, w, dy, stride, dxp, dw):
    n, c, ho, wo = dy.shape
    kh, kw = w.shape[1], w.shape[2]
    dxp[:] = 0.0
    dw[:] = 0.0
    for b in range(n):
        for ch in range(c):
            for di in range(kh):
                for dj in range(kw):
                    wv = w[ch, di, dj]
                    acc = 0.0
                    for i in range(ho):
                        src = xp[b, ch, i * stride + di]
                        dst = dxp[b, ch, i * stride + di]
                        g = dy[b, ch, i]
                        for j in range(wo):
                            acc += g[j] * src[j * stride + dj]
                            dst[j * stride + dj] += wv * g[j]
                    dw[ch, di, dj] += acc
