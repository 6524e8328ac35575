"""Numba loops for the convolution primitives.

Forward kernels accumulate every output element sequentially in
(kernel-row, kernel-col, channel) order, so a plain nested-loop reference
reproduces them bit for bit. Backward kernels only need to be deterministic.
All kernels are dtype-generic: float32 for training, float64 for gradient
checks.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv_forward(xp, w, b):
    """Valid 2-D correlation of a pre-padded NHWC batch.

    ``xp`` is (B, H+K-1, W+L-1, M), ``w`` is (K, L, M, N), ``b`` is (N,).
    """
    B, Hp, Wp, M = xp.shape
    K, L, _, N = w.shape
    H = Hp - K + 1
    W = Wp - L + 1
    out = np.zeros((B, H, W, N), dtype=xp.dtype)
    W4 = W - W % 4
    for bb in range(B):
        for i in range(H):
            for j in range(0, W4, 4):
                for k in range(K):
                    for l in range(L):
                        for m in range(M):
                            v0 = xp[bb, i + k, j + l, m]
                            v1 = xp[bb, i + k, j + l + 1, m]
                            v2 = xp[bb, i + k, j + l + 2, m]
                            v3 = xp[bb, i + k, j + l + 3, m]
                            for n in range(N):
                                wn = w[k, l, m, n]
                                out[bb, i, j, n] += v0 * wn
                                out[bb, i, j + 1, n] += v1 * wn
                                out[bb, i, j + 2, n] += v2 * wn
                                out[bb, i, j + 3, n] += v3 * wn
            for j in range(W4, W):
                for k in range(K):
                    for l in range(L):
                        for m in range(M):
                            v = xp[bb, i + k, j + l, m]
                            for n in range(N):
                                out[bb, i, j, n] += v * w[k, l, m, n]
            for j in range(W):
                for n in range(N):
                    out[bb, i, j, n] += b[n]
    return out


@njit(cache=True)
def conv_grad_weights(xp, dy, K, L):
    B, H, W, N = dy.shape
    M = xp.shape[3]
    dw = np.zeros((K, L, M, N), dtype=xp.dtype)
    W4 = W - W % 4
    for bb in range(B):
        for i in range(H):
            for j in range(0, W4, 4):
                for k in range(K):
                    for l in range(L):
                        for m in range(M):
                            v0 = xp[bb, i + k, j + l, m]
                            v1 = xp[bb, i + k, j + l + 1, m]
                            v2 = xp[bb, i + k, j + l + 2, m]
                            v3 = xp[bb, i + k, j + l + 3, m]
                            for n in range(N):
                                dw[k, l, m, n] += (
                                    v0 * dy[bb, i, j, n]
                                    + v1 * dy[bb, i, j + 1, n]
                                    + v2 * dy[bb, i, j + 2, n]
                                    + v3 * dy[bb, i, j + 3, n]
                                )
            for j in range(W4, W):
                for k in range(K):
                    for l in range(L):
                        for m in range(M):
                            v = xp[bb, i + k, j + l, m]
                            for n in range(N):
                                dw[k, l, m, n] += v * dy[bb, i, j, n]
    return dw


@njit(cache=True)
def maxpool_forward(x):
    """2x2/2 max pool; ``arg`` is the row-major window index of the first max."""
    B, H, W, C = x.shape
    Ho = H // 2
    Wo = W // 2
    y = np.empty((B, Ho, Wo, C), dtype=x.dtype)
    arg = np.empty((B, Ho, Wo, C), dtype=np.int8)
    for bb in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for c in range(C):
                    best = x[bb, 2 * i, 2 * j, c]
                    a = 0
                    v = x[bb, 2 * i, 2 * j + 1, c]
                    if v > best:
                        best = v
                        a = 1
                    v = x[bb, 2 * i + 1, 2 * j, c]
                    if v > best:
                        best = v
                        a = 2
                    v = x[bb, 2 * i + 1, 2 * j + 1, c]
                    if v > best:
                        best = v
                        a = 3
                    y[bb, i, j, c] = best
                    arg[bb, i, j, c] = a
    return y, arg


@njit(cache=True)
def maxpool_backward(dy, arg, H, W):
    B, Ho, Wo, C = dy.shape
    dx = np.zeros((B, H, W, C), dtype=dy.dtype)
    for bb in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for c in range(C):
                    a = arg[bb, i, j, c]
                    dx[bb, 2 * i + a // 2, 2 * j + a % 2, c] = dy[bb, i, j, c]
    return dx


@njit(cache=True)
def depthwise_forward(xp, w):
    """Per-channel valid correlation; ``w`` is (K, L, M)."""
    B, Hp, Wp, M = xp.shape
    K, L, _ = w.shape
    H = Hp - K + 1
    W = Wp - L + 1
    out = np.zeros((B, H, W, M), dtype=xp.dtype)
    for bb in range(B):
        for i in range(H):
            for k in range(K):
                for l in range(L):
                    for j in range(W):
                        for m in range(M):
                            out[bb, i, j, m] += xp[bb, i + k, j + l, m] * w[k, l, m]
    return out


@njit(cache=True)
def depthwise_grad_weights(xp, dy, K, L):
    B, H, W, M = dy.shape
    dw = np.zeros((K, L, M), dtype=xp.dtype)
    for bb in range(B):
        for i in range(H):
            for k in range(K):
                for l in range(L):
                    for j in range(W):
                        for m in range(M):
                            dw[k, l, m] += xp[bb, i + k, j + l, m] * dy[bb, i, j, m]
    return dw


@njit(cache=True)
def ordered_matmul(a, w, b):
    """``a @ w + b`` with each dot product summed in ascending index order."""
    P, Q = a.shape
    N = w.shape[1]
    out = np.zeros((P, N), dtype=a.dtype)
    P4 = P - P % 4
    for p in range(0, P4, 4):
        for q in range(Q):
            v0 = a[p, q]
            v1 = a[p + 1, q]
            v2 = a[p + 2, q]
            v3 = a[p + 3, q]
            for n in range(N):
                wn = w[q, n]
                out[p, n] += v0 * wn
                out[p + 1, n] += v1 * wn
                out[p + 2, n] += v2 * wn
                out[p + 3, n] += v3 * wn
    for p in range(P4, P):
        for q in range(Q):
            v = a[p, q]
            for n in range(N):
                out[p, n] += v * w[q, n]
    for p in range(P):
        for n in range(N):
            out[p, n] += b[n]
    return out
