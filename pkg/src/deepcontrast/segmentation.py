"""Graph-based image segmentation (Kruskal-style merging with an adaptive
threshold) at three granularity levels."""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .kernels import felz_merge

# 8-connectivity: right, down, down-right, down-left
_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass
class Segment:
    id: int
    pixels: np.ndarray  # (n, 2) row/col coordinates
    bbox: tuple  # (min_row, max_row, min_col, max_col), inclusive
    neighbor_ids: set = field(default_factory=set)

    @property
    def size(self):
        return len(self.pixels)


@dataclass
class SegmentationLevel:
    label_map: np.ndarray  # (H, W) int segment ids, contiguous from 0
    segments: list
    level_params: tuple  # (k, min_size, sigma)

    @property
    def num_segments(self):
        return len(self.segments)


def _grid_edges(smoothed):
    """Edges of the 8-connected pixel graph with RGB-distance weights."""
    h, w = smoothed.shape[:2]
    idx = np.arange(h * w).reshape(h, w)
    us, vs, ws = [], [], []
    for dy, dx in _OFFSETS:
        if dx >= 0:
            a = idx[: h - dy, : w - dx]
            b = idx[dy:, dx:]
            pa = smoothed[: h - dy, : w - dx]
            pb = smoothed[dy:, dx:]
        else:
            a = idx[: h - dy, -dx:]
            b = idx[dy:, :dx]
            pa = smoothed[: h - dy, -dx:]
            pb = smoothed[dy:, :dx]
        us.append(a.ravel())
        vs.append(b.ravel())
        ws.append(np.sqrt(((pa - pb) ** 2).sum(axis=2)).ravel())
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ws)


def felzenszwalb_segment(image, k, min_size, sigma):
    """Segment an (H, W, 3) image; deterministic for fixed inputs."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("cannot segment an empty image")
    smoothed = gaussian_filter(image, sigma=(sigma, sigma, 0)) if sigma > 0 else image
    eu, ev, ew = _grid_edges(smoothed)
    order = np.argsort(ew, kind="stable")
    roots = felz_merge(eu[order], ev[order], ew[order], h * w, float(k),
                       int(min_size))
    # contiguous labels in row-major first-occurrence order
    _, first = np.unique(roots, return_index=True)
    remap = np.empty(h * w, dtype=np.int64)
    remap[roots[np.sort(first)]] = np.arange(len(first))
    label_map = remap[roots].reshape(h, w)
    return _build_level(label_map, (k, min_size, sigma))


def _build_level(label_map, params):
    h, w = label_map.shape
    n = int(label_map.max()) + 1
    flat = label_map.ravel()
    order = np.argsort(flat, kind="stable")
    coords = np.stack(np.divmod(order, w), axis=1)
    counts = np.bincount(flat, minlength=n)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    segments = []
    for sid in range(n):
        pix = coords[bounds[sid]:bounds[sid + 1]]
        bbox = (int(pix[:, 0].min()), int(pix[:, 0].max()),
                int(pix[:, 1].min()), int(pix[:, 1].max()))
        segments.append(Segment(id=sid, pixels=pix, bbox=bbox))
    for a, b in _adjacent_pairs(label_map):
        segments[a].neighbor_ids.add(b)
        segments[b].neighbor_ids.add(a)
    return SegmentationLevel(label_map=label_map, segments=segments,
                             level_params=params)


def _adjacent_pairs(label_map):
    """Unique pairs of segment ids sharing a pixel edge (4-connectivity)."""
    right = np.stack([label_map[:, :-1].ravel(), label_map[:, 1:].ravel()], axis=1)
    down = np.stack([label_map[:-1].ravel(), label_map[1:].ravel()], axis=1)
    pairs = np.concatenate([right, down])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def multi_level_segment(image, levels):
    """Segment at three granularities; levels are (k, min_size, sigma) triples
    with non-decreasing k."""
    if len(levels) != 3:
        raise ValueError(f"expected 3 level parameter triples, got {len(levels)}")
    ks = [lvl[0] for lvl in levels]
    if not all(a <= b for a, b in zip(ks, ks[1:])):
        raise ValueError("level k values must be non-decreasing (coarser later)")
    return [felzenszwalb_segment(image, *lvl) for lvl in levels]


def segment_saliency_label(segment, gt_mask):
    """1 iff the mean ground-truth value over the segment exceeds 0.5."""
    vals = gt_mask[segment.pixels[:, 0], segment.pixels[:, 1]]
    return 1 if vals.mean() > 0.5 else 0
