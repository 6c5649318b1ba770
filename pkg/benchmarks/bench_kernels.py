"""Compare the compiled kernels against the pure-python fallbacks.

Run as ``python benchmarks/bench_kernels.py``.  Both backends are imported
directly, so the DEEPCONTRAST_BACKEND environment variable is irrelevant
here; the script also cross-checks that the two implementations agree.
"""

import time

import numpy as np

from deepcontrast import _kernels_py

try:
    from deepcontrast import _speedups
except ImportError:
    _speedups = None


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def grid_edges(rng, h, w):
    idx = np.arange(h * w).reshape(h, w)
    us, vs = [], []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        if dx >= 0:
            us.append(idx[:h - dy, :w - dx].ravel())
            vs.append(idx[dy:, dx:].ravel())
        else:
            us.append(idx[:h - dy, -dx:].ravel())
            vs.append(idx[dy:, :dx].ravel())
    eu = np.concatenate(us).astype(np.int64)
    ev = np.concatenate(vs).astype(np.int64)
    ew = rng.uniform(0, 100, size=len(eu))
    order = np.argsort(ew, kind="stable")
    return eu[order], ev[order], ew[order]


def canonical(roots):
    remap = {}
    return np.array([remap.setdefault(r, len(remap)) for r in roots])


def bench_felz(rng, h=128, w=128):
    eu, ev, ew = grid_edges(rng, h, w)
    n = h * w
    t_py, r_py = timeit(lambda: _kernels_py.felz_merge(eu, ev, ew, n, 150.0, 20))
    print(f"felz_merge {h}x{w} ({len(eu)} edges)")
    print(f"  py : {t_py * 1e3:8.2f} ms")
    if _speedups is not None:
        t_ext, r_ext = timeit(lambda: _speedups.felz_merge(eu, ev, ew, n,
                                                           150.0, 20))
        same = np.array_equal(canonical(r_py), canonical(r_ext))
        print(f"  ext: {t_ext * 1e3:8.2f} ms  "
              f"(speedup {t_py / t_ext:5.1f}x, partitions match: {same})")


def bench_appearance(rng, h=64, w=64, channels=5, radius=9):
    q = rng.uniform(size=(h, w))
    feats = rng.normal(size=(h, w, channels))
    t_py, r_py = timeit(
        lambda: _kernels_py.appearance_filter(q, feats, radius), repeats=3)
    print(f"appearance_filter {h}x{w}, {channels} features, radius {radius}")
    print(f"  py : {t_py * 1e3:8.2f} ms")
    if _speedups is not None:
        t_ext, r_ext = timeit(
            lambda: _speedups.appearance_filter(q, feats, radius), repeats=3)
        close = np.allclose(r_py, r_ext, atol=1e-12)
        print(f"  ext: {t_ext * 1e3:8.2f} ms  "
              f"(speedup {t_py / t_ext:5.1f}x, outputs match: {close})")


def main():
    if _speedups is None:
        print("compiled extension not available; timing pure python only\n")
    rng = np.random.default_rng(0)
    bench_felz(rng)
    print()
    bench_appearance(rng)


if __name__ == "__main__":
    main()
