"""Saliency evaluation metrics: PR curves over the 256 integer thresholds,
F-measure (beta^2 = 0.3), adaptive-threshold PRF, and mean absolute error."""

from dataclasses import dataclass

import numpy as np

BETA_SQ = 0.3
NUM_THRESHOLDS = 256


@dataclass
class PRCurve:
    thresholds: np.ndarray  # 0..255
    precision: np.ndarray  # dataset-averaged, per threshold
    recall: np.ndarray


def _to_uint8(pred):
    p = np.asarray(pred)
    if p.dtype == np.uint8:
        return p
    return np.clip(np.rint(p * 255.0), 0, 255).astype(np.uint8)


def _binary_gt(gt):
    return np.asarray(gt) >= 0.5


def _prf_counts(tp, fp, fn):
    """Precision defined as 1 when nothing is predicted salient."""
    pred_pos = tp + fp
    precision = np.where(pred_pos > 0, tp / np.maximum(pred_pos, 1), 1.0)
    gt_pos = tp + fn
    recall = np.where(gt_pos > 0, tp / np.maximum(gt_pos, 1), 1.0)
    return precision, recall


def pr_curve(pred_maps, gt_masks):
    """Average per-threshold precision/recall over a dataset.  Maps are
    binarized as value > t for every integer threshold t in 0..255."""
    precisions = np.zeros(NUM_THRESHOLDS)
    recalls = np.zeros(NUM_THRESHOLDS)
    n = 0
    for i, (pred, gt) in enumerate(zip(pred_maps, gt_masks)):
        p = _to_uint8(pred)
        g = _binary_gt(gt)
        if p.shape != g.shape:
            raise ValueError(
                f"image {i}: prediction dims {p.shape} != mask dims {g.shape}"
            )
        pos_hist = np.bincount(p[g].ravel(), minlength=256)
        neg_hist = np.bincount(p[~g].ravel(), minlength=256)
        # pixels with value > t: reversed-cumsum shifted by one
        tp = pos_hist[::-1].cumsum()[::-1]
        fp = neg_hist[::-1].cumsum()[::-1]
        tp = np.concatenate([tp[1:], [0]]).astype(np.float64)
        fp = np.concatenate([fp[1:], [0]]).astype(np.float64)
        fn = g.sum() - tp
        prec, rec = _prf_counts(tp, fp, fn)
        precisions += prec
        recalls += rec
        n += 1
    if n == 0:
        raise ValueError("pr_curve needs at least one map/mask pair")
    return PRCurve(thresholds=np.arange(NUM_THRESHOLDS),
                   precision=precisions / n, recall=recalls / n)


def f_measure(precision, recall, beta_sq=BETA_SQ):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    denom = beta_sq * precision + recall
    num = (1.0 + beta_sq) * precision * recall
    return np.where(denom > 0, num / np.maximum(denom, 1e-300), 0.0)


def max_f(curve: PRCurve, beta_sq=BETA_SQ):
    return float(f_measure(curve.precision, curve.recall, beta_sq).max())


def adaptive_threshold_prf(pred_maps, gt_masks, beta_sq=BETA_SQ):
    """Binarize each map at min(2*mean, max) and average P/R/F per image."""
    ps, rs, fs = [], [], []
    for pred, gt in zip(pred_maps, gt_masks):
        p = np.asarray(pred, dtype=np.float64)
        if p.max() > 1.0:
            p = p / 255.0
        g = _binary_gt(gt)
        thresh = min(2.0 * p.mean(), p.max())
        binary = p >= thresh
        tp = float((binary & g).sum())
        fp = float((binary & ~g).sum())
        fn = float((~binary & g).sum())
        prec, rec = _prf_counts(np.array(tp), np.array(fp), np.array(fn))
        f = float(f_measure(prec, rec, beta_sq))
        ps.append(float(prec))
        rs.append(float(rec))
        fs.append(f)
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs))


def mae(pred, gt):
    """Mean absolute per-pixel difference of [0,1]-normalized maps."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.max() > 1.0:
        p = p / 255.0
    if g.max() > 1.0:
        g = g / 255.0
    if p.shape != g.shape:
        raise ValueError(f"dims mismatch: {p.shape} vs {g.shape}")
    return float(np.abs(p - g).mean())


def dataset_mae(pred_maps, gt_masks):
    return float(np.mean([mae(p, g) for p, g in zip(pred_maps, gt_masks)]))
