"""Segment-wise spatial pooling stream.

Feature-map locations are projected to their receptive-field centers, each
image pixel is assigned to the nearest center, and segment masks are
backprojected onto the feature-masking layer.  Masked features are pooled
over a small grid for three nested context regions; the concatenated
descriptor is scored by a two-hidden-layer MLP with a sigmoid output.
"""

from dataclasses import dataclass

import numpy as np

from .network import STRIDE_TOTAL
from .tensor import Tensor, matmul, relu, sigmoid, uniform_init
from .weights import WeightStore

GRID_H = 2
GRID_W = 2
CONTEXTS = 3

# Receptive-field centers sit mid-block for the stride-8 aligned geometry of
# same-padded convolutions: center(i) = 8*i + 3.5, so the nearest-center
# assignment of pixel p is simply p // 8.
RF_OFFSET = (STRIDE_TOTAL - 1) / 2.0


@dataclass
class RFProjection:
    image_dims: tuple  # (H, W)
    fm_dims: tuple  # (h, w) at 1/8 resolution
    cell_counts: np.ndarray  # pixels assigned to each fm location

    def centers(self):
        ys = np.arange(self.fm_dims[0]) * STRIDE_TOTAL + RF_OFFSET
        xs = np.arange(self.fm_dims[1]) * STRIDE_TOTAL + RF_OFFSET
        return ys, xs

    def assign(self, rows, cols):
        """Nearest-center fm coordinates for image pixel coordinates."""
        r = np.minimum(rows // STRIDE_TOTAL, self.fm_dims[0] - 1)
        c = np.minimum(cols // STRIDE_TOTAL, self.fm_dims[1] - 1)
        return r, c


def project_rf_centers(image_dims, fm_dims):
    h, w = image_dims
    fh, fw = fm_dims
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    proj = RFProjection(image_dims=(h, w), fm_dims=(fh, fw),
                        cell_counts=np.zeros((fh, fw), dtype=np.int64))
    fr, fc = proj.assign(rr.ravel(), cc.ravel())
    np.add.at(proj.cell_counts, (fr, fc), 1)
    return proj


def backproject_segment_mask(segment, proj: RFProjection):
    """Boolean fm mask: locations where >= half the assigned pixels belong to
    the segment, falling back to all nonzero-ratio locations.  Never empty
    for a non-empty segment."""
    fr, fc = proj.assign(segment.pixels[:, 0], segment.pixels[:, 1])
    counts = np.zeros(proj.fm_dims, dtype=np.int64)
    np.add.at(counts, (fr, fc), 1)
    ratio = counts / proj.cell_counts
    mask = ratio >= 0.5
    if not mask.any():
        mask = ratio > 0
    return mask


def mask_features(feature_map, mask):
    """Channel-wise product of a (C, h, w) map with a boolean (h, w) mask."""
    if not np.asarray(mask).any():
        raise ValueError("refusing to mask features with an empty mask")
    return feature_map * mask[None].astype(np.float64)


def _grid_bounds(lo, hi, cells):
    """Split the inclusive range [lo, hi] into ``cells`` contiguous chunks."""
    edges = np.linspace(lo, hi + 1, cells + 1)
    return np.floor(edges).astype(int)


def spatial_pool(feature_map, bbox, valid, grid_h=GRID_H, grid_w=GRID_W,
                 mode="max"):
    """Pool a (C, h, w) map over a grid inside an inclusive fm bbox, using
    only valid positions; cells with no valid position yield zeros."""
    c = feature_map.shape[0]
    r0, r1, c0, c1 = bbox
    r1, c1 = max(r1, r0), max(c1, c0)  # degenerate bbox expands to 1x1
    rows = _grid_bounds(r0, r1, grid_h)
    cols = _grid_bounds(c0, c1, grid_w)
    out = np.zeros((grid_h, grid_w, c))
    for gy in range(grid_h):
        for gx in range(grid_w):
            rs, re = rows[gy], max(rows[gy + 1], rows[gy] + 1)
            cs, ce = cols[gx], max(cols[gx + 1], cols[gx] + 1)
            sub_valid = valid[rs:re, cs:ce]
            if not sub_valid.any():
                continue
            sub = feature_map[:, rs:re, cs:ce][:, sub_valid]
            out[gy, gx] = sub.max(axis=1) if mode == "max" else sub.mean(axis=1)
    return out.reshape(-1)


def _fm_bbox(bbox, fm_dims):
    r0, r1, c0, c1 = bbox
    return (r0 // STRIDE_TOTAL,
            min(r1 // STRIDE_TOTAL, fm_dims[0] - 1),
            c0 // STRIDE_TOTAL,
            min(c1 // STRIDE_TOTAL, fm_dims[1] - 1))


def build_descriptor(segment, level, feature_map, proj: RFProjection,
                     masks=None, mode="max"):
    """Triple-context descriptor: the segment's own fm bbox, the bbox of the
    segment plus its immediate neighbors, and the entire feature map with
    the segment's own locations zeroed out."""
    fm_dims = feature_map.shape[1:]
    if masks is None:
        masks = {}
    own = masks.get(segment.id)
    if own is None:
        own = backproject_segment_mask(segment, proj)
    bbox1 = _fm_bbox(segment.bbox, fm_dims)
    c1 = spatial_pool(feature_map, bbox1, own, mode=mode)

    union_mask = own.copy()
    r0, r1, c0_, c1_ = segment.bbox
    for nid in sorted(segment.neighbor_ids):
        nb = level.segments[nid]
        nmask = masks.get(nid)
        if nmask is None:
            nmask = backproject_segment_mask(nb, proj)
        union_mask |= nmask
        r0 = min(r0, nb.bbox[0])
        r1 = max(r1, nb.bbox[1])
        c0_ = min(c0_, nb.bbox[2])
        c1_ = max(c1_, nb.bbox[3])
    bbox2 = _fm_bbox((r0, r1, c0_, c1_), fm_dims)
    c2 = spatial_pool(feature_map, bbox2, union_mask, mode=mode)

    excluded = mask_features(feature_map, ~own) if (~own).any() \
        else np.zeros_like(feature_map)
    bbox3 = (0, fm_dims[0] - 1, 0, fm_dims[1] - 1)
    c3 = spatial_pool(excluded, bbox3, ~own, mode=mode)
    return np.concatenate([c1, c2, c3])


def descriptor_length(feature_channels):
    return CONTEXTS * GRID_H * GRID_W * feature_channels


def normalize_descriptors(matrix):
    """Row-wise L2 normalization; keeps the scorer input scale independent
    of the backbone's activation magnitudes."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    return matrix / np.maximum(norms, 1e-12)


def build_mlp(in_dim, hidden, seed):
    rng = np.random.default_rng(seed)
    store = WeightStore()
    store.add("fc1.w", uniform_init((in_dim, hidden), in_dim, hidden, rng))
    store.add("fc1.b", Tensor(np.zeros(hidden), requires_grad=True))
    store.add("fc2.w", uniform_init((hidden, hidden), hidden, hidden, rng))
    store.add("fc2.b", Tensor(np.zeros(hidden), requires_grad=True))
    store.add("out.w", uniform_init((hidden, 1), hidden, 1, rng))
    store.add("out.b", Tensor(np.zeros(1), requires_grad=True))
    return store


def score_segments(descriptors, mlp: WeightStore):
    """Sigmoid saliency scores for a (n, D) descriptor matrix; returns a
    Tensor of shape (n,) for training with the squared-error loss."""
    x = descriptors if isinstance(descriptors, Tensor) else Tensor(descriptors)
    h1 = relu(matmul(x, mlp["fc1.w"]) + _row(mlp["fc1.b"], x))
    h2 = relu(matmul(h1, mlp["fc2.w"]) + _row(mlp["fc2.b"], h1))
    logits = matmul(h2, mlp["out.w"]) + _row(mlp["out.b"], h2)
    return _squeeze(sigmoid(logits))


def _row(bias, ref):
    """Broadcast a bias row over the batch via an explicit tile op."""
    n = ref.data.shape[0]
    ones = Tensor(np.ones((n, 1)))
    return matmul(ones, _reshape(bias, (1, bias.data.shape[0])))


def _reshape(t, shape):
    out = Tensor(t.data.reshape(shape))
    if t.requires_grad or t._parents:
        out._parents = (t,)
        out._backward = lambda g: (g.reshape(t.data.shape),)
    return out


def _squeeze(t):
    out = Tensor(t.data[:, 0])
    if t.requires_grad or t._parents:
        out._parents = (t,)
        out._backward = lambda g: (g[:, None],)
    return out


def render_s2(levels, per_level_scores):
    """Paint every pixel with its segment's score per level and average the
    level maps."""
    maps = []
    for level, scores in zip(levels, per_level_scores):
        scores = np.asarray(scores, dtype=np.float64)
        maps.append(scores[level.label_map])
    return np.mean(maps, axis=0)
