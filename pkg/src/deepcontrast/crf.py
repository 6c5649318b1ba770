"""Contour-guided fully connected CRF.

A contour map induces a sparse affinity graph over an 11x11 pixel
neighborhood; the generalized eigenvectors of (D - W) v = lambda D v form a
per-pixel embedding used inside the appearance kernel of a dense two-kernel
CRF, minimized approximately by parallel mean-field updates.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.ndimage import correlate1d

from .kernels import appearance_filter

AFFINITY_RADIUS = 5  # 11x11 neighborhood
EMBED_DIM = 16
UNARY_EPS = 1e-10
DENSE_EIG_LIMIT = 2048  # dense solver below this pixel count


@dataclass
class CrfConfig:
    w1: float = 3.0
    w2: float = 5.0
    sigma_alpha: float = 3.0
    sigma_beta: float = 50.0
    sigma_gamma: float = 3.0
    sigma_epsilon: float = 9.0
    rho: float = 0.1
    iterations: int = 10

    def validate(self):
        for f in ("w1", "w2", "sigma_alpha", "sigma_beta", "sigma_gamma",
                  "sigma_epsilon", "rho"):
            if getattr(self, f) <= 0:
                raise ValueError(f"CRF parameter {f} must be positive")
        return self


def _bresenham(dy, dx):
    """Integer midpoint traversal from (0,0) to (dy,dx), both ends included."""
    points = []
    steps = max(abs(dy), abs(dx))
    if steps == 0:
        return [(0, 0)]
    sy = 1 if dy > 0 else -1
    sx = 1 if dx > 0 else -1
    ady, adx = abs(dy), abs(dx)
    if adx >= ady:
        err = adx // 2
        y = 0
        for i in range(adx + 1):
            points.append((y, sx * i))
            err -= ady
            if err < 0:
                y += sy
                err += adx
    else:
        err = ady // 2
        x = 0
        for i in range(ady + 1):
            points.append((sy * i, x))
            err -= adx
            if err < 0:
                x += sx
                err += ady
    return points


def contour_affinity(contour_map, rho, radius=AFFINITY_RADIUS):
    """Sparse symmetric affinity W_ij = exp(-max_{p on line ij} M(p)^2 / rho)
    over the (2r+1)^2 neighborhood; diagonal excluded."""
    m = np.asarray(contour_map, dtype=np.float64)
    h, w = m.shape
    m2 = m * m
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            if dy > h - 1 or abs(dx) > w - 1:
                continue
            ys, yd = slice(0, h - dy), slice(dy, h)
            if dx >= 0:
                xs, xd = slice(0, w - dx), slice(dx, w)
            else:
                xs, xd = slice(-dx, w), slice(0, w + dx)
            line_max = None
            for py, px in _bresenham(dy, dx):
                oy = slice(py, py + h - dy)
                ox = slice(px + (0 if dx >= 0 else -dx),
                           px + (0 if dx >= 0 else -dx) + w - abs(dx))
                piece = m2[oy, ox]
                line_max = piece if line_max is None else np.maximum(line_max, piece)
            aff = np.exp(-line_max / rho)
            a = idx[ys, xs].ravel()
            b = idx[yd, xd].ravel()
            rows.append(a)
            cols.append(b)
            vals.append(aff.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    mat = scipy.sparse.coo_matrix(
        (np.concatenate([v, v]), (np.concatenate([r, c]), np.concatenate([c, r]))),
        shape=(h * w, h * w),
    )
    return mat.tocsr()


def contour_embedding(affinity, dims, k=EMBED_DIM):
    """The k smallest generalized eigenpairs of (D - W) v = lambda D v.

    Eigenvectors are D-normalized (v^T D v = 1) with the largest-magnitude
    component made positive.  Returns (eigenvalues, (H, W, k) embedding).
    """
    h, w = dims
    n = affinity.shape[0]
    d = np.asarray(affinity.sum(axis=1)).ravel()
    if (d == 0).any():
        warnings.warn("affinity graph has isolated pixels; regularizing D")
        d = d + 1e-12
    laplacian = scipy.sparse.diags(d) - affinity
    if n <= DENSE_EIG_LIMIT or k + 2 >= n:
        kk = min(k, n)
        evals, evecs = scipy.linalg.eigh(
            laplacian.toarray(), np.diag(d), subset_by_index=(0, kk - 1),
            driver="gvx",
        )
    else:
        # shift-invert around a slightly negative sigma keeps the factored
        # operator positive definite despite the singular Laplacian
        evals, evecs = scipy.sparse.linalg.eigsh(
            laplacian, k=k, M=scipy.sparse.diags(d), sigma=-1e-6,
            which="LM", v0=np.ones(n),
        )
    order = np.argsort(evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    norms = np.sqrt(np.einsum("ik,i,ik->k", evecs, d, evecs))
    evecs = evecs / norms
    top = np.abs(evecs).argmax(axis=0)
    signs = np.sign(evecs[top, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    if evecs.shape[1] < k:
        evecs = np.pad(evecs, ((0, 0), (0, k - evecs.shape[1])))
        evals = np.pad(evals, (0, k - len(evals)))
    return evals, evecs.reshape(h, w, -1)


def _pair_features(image, embedding, config):
    """Feature stacks whose plain squared distances give the two kernels."""
    h, w = image.shape[:2]
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sa = np.sqrt(2.0) * config.sigma_alpha
    sb = np.sqrt(2.0) * config.sigma_beta
    app = [yy / sa, xx / sa]
    app.extend(image[:, :, ch] / sb for ch in range(image.shape[2]))
    if embedding is not None:
        sg = np.sqrt(2.0) * config.sigma_gamma
        app.extend(embedding[:, :, ch] / sg for ch in range(embedding.shape[2]))
    appearance = np.stack(app, axis=2)
    se = np.sqrt(2.0) * config.sigma_epsilon
    smooth = np.stack([yy / se, xx / se], axis=2)
    return appearance, smooth


def crf_energy(labeling, unary_map, image, embedding, config: CrfConfig):
    """Exact energy of a binary labeling under the dense two-kernel model;
    pairwise terms counted once per unordered pixel pair."""
    lab = np.asarray(labeling).ravel().astype(np.int64)
    s = np.clip(np.asarray(unary_map, dtype=np.float64).ravel(),
                UNARY_EPS, 1.0 - UNARY_EPS)
    p_of_label = np.where(lab == 1, s, 1.0 - s)
    energy = -np.log(p_of_label).sum()
    appearance, smooth = _pair_features(image, embedding, config)
    fa = appearance.reshape(-1, appearance.shape[2])
    fs = smooth.reshape(-1, smooth.shape[2])
    k1 = np.exp(-((fa[:, None] - fa[None]) ** 2).sum(axis=2))
    k2 = np.exp(-((fs[:, None] - fs[None]) ** 2).sum(axis=2))
    theta = config.w1 * k1 + config.w2 * k2
    differ = lab[:, None] != lab[None]
    iu = np.triu_indices(len(lab), k=1)
    energy += (theta * differ)[iu].sum()
    return float(energy)


def _gaussian_taps(sigma, radius):
    t = np.exp(-(np.arange(-radius, radius + 1) ** 2) / (2.0 * sigma * sigma))
    return t


def mean_field_infer(saliency, image, embedding, config: CrfConfig,
                     radius=None):
    """Parallel (Jacobi) mean-field updates of the dense CRF posterior.

    saliency is the unary P(l=1); returns the per-pixel posterior of label 1.
    Messages are direct sums within a truncated window of ~3 sigma per
    kernel (radius overrides the appearance window when given).
    """
    s = np.clip(np.asarray(saliency, dtype=np.float64),
                UNARY_EPS, 1.0 - UNARY_EPS)
    h, w = s.shape
    log_unary1 = np.log(s)
    log_unary0 = np.log1p(-s)
    q1 = s.copy()
    if config.w1 == 0.0 and config.w2 == 0.0:
        return q1
    appearance, _ = _pair_features(image, embedding, config)
    r_app = radius if radius is not None else max(
        1, int(np.ceil(3.0 * config.sigma_alpha)))
    r_smooth = radius if radius is not None else max(
        1, int(np.ceil(3.0 * config.sigma_epsilon)))
    taps = _gaussian_taps(config.sigma_epsilon, r_smooth)

    def smooth_filter(q):
        out = correlate1d(q, taps, axis=0, mode="constant")
        out = correlate1d(out, taps, axis=1, mode="constant")
        return out - q  # remove self-message (kernel value 1 at offset 0)

    for _ in range(config.iterations):
        q0 = 1.0 - q1
        m1 = (config.w1 * appearance_filter(q0, appearance, r_app)
              + config.w2 * smooth_filter(q0))
        m0 = (config.w1 * appearance_filter(q1, appearance, r_app)
              + config.w2 * smooth_filter(q1))
        z1 = log_unary1 - m1
        z0 = log_unary0 - m0
        zmax = np.maximum(z1, z0)
        e1 = np.exp(z1 - zmax)
        e0 = np.exp(z0 - zmax)
        q1 = e1 / (e1 + e0)
    return q1
