"""Numpy fallbacks for the compiled kernels in _speedups.pyx."""

import numpy as np


def felz_merge(eu, ev, ew, n, k, min_size):
    parent = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    thresh = np.full(n, k, dtype=np.float64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for i in range(len(eu)):
        a, b = find(eu[i]), find(ev[i])
        if a == b:
            continue
        w = ew[i]
        if w <= thresh[a] and w <= thresh[b]:
            parent[a] = b
            size[b] += size[a]
            thresh[b] = w + k / size[b]
    for i in range(len(eu)):
        a, b = find(eu[i]), find(ev[i])
        if a != b and (size[a] < min_size or size[b] < min_size):
            parent[a] = b
            size[b] += size[a]
    for i in range(n):
        find(i)
    return parent


def appearance_filter(q, feats, radius):
    h, w = q.shape
    out = np.zeros((h, w))
    # exploit kernel symmetry: each ordered offset pair handled once
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            ys = slice(0, h - dy)
            yd = slice(dy, h)
            if dx >= 0:
                xs, xd = slice(0, w - dx), slice(dx, w)
            else:
                xs, xd = slice(-dx, w), slice(0, w + dx)
            d2 = ((feats[ys, xs] - feats[yd, xd]) ** 2).sum(axis=2)
            kern = np.exp(-d2)
            out[ys, xs] += kern * q[yd, xd]
            out[yd, xd] += kern * q[ys, xs]
    return out
