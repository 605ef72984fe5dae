"""Compiled loops: bilinear gather/scatter for deformable convolution, depthwise convolution."""

import numpy as np
from numba import njit


@njit(cache=True)
def _corner(py, px):
    y0 = int(np.floor(py))
    x0 = int(np.floor(px))
    return y0, x0, py - y0, px - x0


@njit(cache=True)
def gather(x, off, base_y, base_x):
    """Bilinear samples (N, C, K, P); ``off`` is (N, K, 2, P), bases are (K, P)."""
    n, c, h, w = x.shape
    k, p = base_y.shape
    out = np.zeros((n, c, k, p), dtype=x.dtype)
    for b in range(n):
        for t in range(k):
            for q in range(p):
                y0, x0, ly, lx = _corner(base_y[t, q] + off[b, t, 0, q], base_x[t, q] + off[b, t, 1, q])
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    wy = ly if dy else 1 - ly
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= w:
                            continue
                        wt = wy * (lx if dx else 1 - lx)
                        for ch in range(c):
                            out[b, ch, t, q] += wt * x[b, ch, yy, xx]
    return out


@njit(cache=True)
def scatter(gs, x, off, base_y, base_x, need_x):
    """Adjoint of :func:`gather` w.r.t. the input and the offsets."""
    n, c, h, w = x.shape
    k, p = base_y.shape
    gx = np.zeros(x.shape, dtype=gs.dtype)
    goff = np.zeros(off.shape, dtype=gs.dtype)
    for b in range(n):
        for t in range(k):
            for q in range(p):
                y0, x0, ly, lx = _corner(base_y[t, q] + off[b, t, 0, q], base_x[t, q] + off[b, t, 1, q])
                g_y = 0.0
                g_x = 0.0
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    wy = ly if dy else 1 - ly
                    sy = 1.0 if dy else -1.0
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= w:
                            continue
                        wx = lx if dx else 1 - lx
                        sx = 1.0 if dx else -1.0
                        acc = 0.0
                        for ch in range(c):
                            g = gs[b, ch, t, q]
                            acc += g * x[b, ch, yy, xx]
                            if need_x:
                                gx[b, ch, yy, xx] += g * wy * wx
                        g_y += acc * sy * wx
                        g_x += acc * sx * wy
                goff[b, t, 0, q] = g_y
                goff[b, t, 1, q] = g_x
    return gx, goff


@njit(cache=True, fastmath=True)
def depthwise_forward(xp, wt, stride, dil, ho, wo):
    """``xp`` is the padded input (N, C, Hp, Wp); ``wt`` is (C, KH, KW)."""
    n, c = xp.shape[:2]
    kh, kw = wt.shape[1:]
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for a in range(kh):
                for q in range(kw):
                    v = wt[ch, a, q]
                    r0, c0 = a * dil, q * dil
                    for i in range(ho):
                        for j in range(wo):
                            out[b, ch, i, j] += v * xp[b, ch, r0 + i * stride, c0 + j * stride]
    return out


@njit(cache=True, fastmath=True)
def depthwise_backward(go, xp, wt, stride, dil, need_x):
    n, c, ho, wo = go.shape
    kh, kw = wt.shape[1:]
    gw = np.zeros(wt.shape, dtype=go.dtype)
    gxp = np.zeros(xp.shape if need_x else (0, 0, 0, 0), dtype=go.dtype)
    zero = go.dtype.type(0)
    for b in range(n):
        for ch in range(c):
            for a in range(kh):
                for q in range(kw):
                    r0, c0 = a * dil, q * dil
                    acc = zero
                    for i in range(ho):
                        for j in range(wo):
                            acc += go[b, ch, i, j] * xp[b, ch, r0 + i * stride, c0 + j * stride]
                    gw[ch, a, q] += acc
                    if need_x:
                        v = wt[ch, a, q]
                        for i in range(ho):
                            for j in range(wo):
                                gxp[b, ch, r0 + i * stride, c0 + j * stride] += go[b, ch, i, j] * v
    return gw, gxp
