"""Shared oracles for the test suite."""

import itertools
from collections import deque

import numpy as np

from arfc.gradcheck import check_gradients
from arfc.tensor import Tensor


def weighted_sum(fn, shape, rng):
    probe = Tensor(rng.normal(size=shape))
    return lambda: (fn() * probe).sum()


def assert_grads(fn, tensors, **kw):
    report = check_gradients(fn, tensors, **kw)
    assert report.passed, report.worst
    return report


def bilinear_at(img, y, x):
    """Zero-padded bilinear read of a 2-D array at one fractional point."""
    h, w = img.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    total = 0.0
    for dy in (0, 1):
        for dx in (0, 1):
            yy, xx = y0 + dy, x0 + dx
            wt = (1 - abs(y - yy)) * (1 - abs(x - xx))
            if 0 <= yy < h and 0 <= xx < w:
                total += wt * img[yy, xx]
    return total


def loop_deform_conv(x, off, mod, w, padding=1, dilation=1):
    """Modulated deformable convolution as nested loops over pixels and taps."""
    n, c, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = h + 2 * padding - dilation * (kh - 1)
    wo = wd + 2 * padding - dilation * (kw - 1)
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for k in range(kh * kw):
                    a, q = divmod(k, kw)
                    py = i - padding + a * dilation + off[b, 2 * k, i, j]
                    px = j - padding + q * dilation + off[b, 2 * k + 1, i, j]
                    vals = np.array([bilinear_at(x[b, ci], py, px) for ci in range(c)])
                    out[b, :, i, j] += mod[b, k, i, j] * (w[:, :, a, q] @ vals)
    return out


def flood_fill(mask):
    """Components as frozensets of pixels, by breadth-first search."""
    seen, comps = set(), set()
    h, w = mask.shape
    for r0, c0 in zip(*np.nonzero(mask)):
        if (r0, c0) in seen:
            continue
        comp, queue = set(), deque([(r0, c0)])
        seen.add((r0, c0))
        while queue:
            r, c = queue.popleft()
            comp.add((int(r), int(c)))
            for dr, dc in itertools.product((-1, 0, 1), repeat=2):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and (rr, cc) not in seen:
                    seen.add((rr, cc))
                    queue.append((rr, cc))
        comps.add(frozenset(comp))
    return comps
