"""Numba kernels for the convolution and pooling hot paths.

Direct (no im2col) loops: the innermost loop always runs over the output
column so LLVM vectorizes it, and every accumulation target is owned by
exactly one thread, so results are bit-reproducible run to run.
"""

import numba as nb
import numpy as np

__all__ = ["conv2d_forward", "conv2d_backward_weights", "conv2d_backward_input",
           "maxpool2_forward", "maxpool2_backward"]


@nb.njit(parallel=True, fastmath=True, cache=True)
def conv2d_forward(x, w, b, stride, out):
    # x: (N, C, Hp, Wp) already padded; w: (F, C, K, K); out: (N, F, oh, ow)
    n_n, n_c, _, _ = x.shape
    n_f, _, k, _ = w.shape
    oh, ow = out.shape[2], out.shape[3]
    for nf in nb.prange(n_n * n_f):
        n = nf // n_f
        f = nf % n_f
        for i in range(oh):
            row = out[n, f, i]
            for j in range(ow):
                row[j] = b[f]
            ii = i * stride
            for c in range(n_c):
                for p in range(k):
                    xrow = x[n, c, ii + p]
                    for q in range(k):
                        wv = w[f, c, p, q]
                        for j in range(ow):
                            row[j] += wv * xrow[j * stride + q]


@nb.njit(parallel=True, fastmath=True, cache=True)
def conv2d_backward_weights(x, dout, stride, dw, db):
    # parallel over output channels: each f owns dw[f] and db[f]
    n_n, n_c, _, _ = x.shape
    n_f, _, k, _ = dw.shape
    oh, ow = dout.shape[2], dout.shape[3]
    for f in nb.prange(n_f):
        for n in range(n_n):
            for i in range(oh):
                drow = dout[n, f, i]
                ii = i * stride
                acc_b = 0.0
                for j in range(ow):
                    acc_b += drow[j]
                db[f] += acc_b
                for c in range(n_c):
                    for p in range(k):
                        xrow = x[n, c, ii + p]
                        for q in range(k):
                            acc = 0.0
                            for j in range(ow):
                                acc += drow[j] * xrow[j * stride + q]
                            dw[f, c, p, q] += acc


@nb.njit(parallel=True, fastmath=True, cache=True)
def conv2d_backward_input(dout, w, stride, dx_pad):
    # parallel over (n, c): each pair owns the dx_pad[n, c] plane
    n_f, n_c, k, _ = w.shape
    n_n = dout.shape[0]
    oh, ow = dout.shape[2], dout.shape[3]
    for nc in nb.prange(n_n * n_c):
        n = nc // n_c
        c = nc % n_c
        plane = dx_pad[n, c]
        for f in range(n_f):
            for i in range(oh):
                drow = dout[n, f, i]
                ii = i * stride
                for p in range(k):
                    target = plane[ii + p]
                    for q in range(k):
                        wv = w[f, c, p, q]
                        for j in range(ow):
                            target[j * stride + q] += wv * drow[j]


@nb.njit(parallel=True, cache=True)
def maxpool2_forward(x, out, idx):
    # 2x2 stride-2 windows; idx records the row-major argmax (first max wins)
    n_n, n_c, _, _ = x.shape
    oh, ow = out.shape[2], out.shape[3]
    for nc in nb.prange(n_n * n_c):
        n = nc // n_c
        c = nc % n_c
        for i in range(oh):
            r0 = x[n, c, 2 * i]
            r1 = x[n, c, 2 * i + 1]
            for j in range(ow):
                jj = 2 * j
                best = r0[jj]
                k = np.uint8(0)
                if r0[jj + 1] > best:
                    best = r0[jj + 1]
                    k = np.uint8(1)
                if r1[jj] > best:
                    best = r1[jj]
                    k = np.uint8(2)
                if r1[jj + 1] > best:
                    best = r1[jj + 1]
                    k = np.uint8(3)
                out[n, c, i, j] = best
                idx[n, c, i, j] = k


@nb.njit(parallel=True, cache=True)
def maxpool2_backward(dout, idx, dx):
    n_n, n_c, oh, ow = dout.shape
    for nc in nb.prange(n_n * n_c):
        n = nc // n_c
        c = nc % n_c
        for i in range(oh):
            for j in range(ow):
                k = idx[n, c, i, j]
                dx[n, c, 2 * i + k // 2, 2 * j + k % 2] = dout[n, c, i, j]
