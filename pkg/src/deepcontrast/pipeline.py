"""Inference and evaluation orchestration for the two-stream model."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .crf import CrfConfig, contour_affinity, contour_embedding, mean_field_infer
from .fusion import (
    attention_forward, downsample_by_area, fuse_average, fuse_conv1x1,
    fuse_saliency, upsample_fused,
)
from .imageio import write_pgm
from .metrics import adaptive_threshold_prf, dataset_mae, max_f, pr_curve
from .network import (
    NetworkSpec, STRIDE_TOTAL, forward_msfcn, multiscale_infer,
    single_scale_forward,
)
from .segmentation import multi_level_segment
from .segments import (
    backproject_segment_mask, build_descriptor, normalize_descriptors,
    project_rf_centers, render_s2, score_segments,
)
from .tensor import Tensor, bilinear_resize, no_grad
from .weights import WeightStore


@dataclass
class Models:
    config: PipelineConfig
    spec: NetworkSpec
    msfcn: WeightStore  # stream 1 + attention module
    mlp: WeightStore  # stream 2 scoring head
    contour: WeightStore = None  # contour-mode MS-FCN (optional)


def spec_from_config(cfg: PipelineConfig):
    return NetworkSpec(
        stage_channels=tuple(cfg.stage_channels),
        side_channels=cfg.side_channels,
        head_channels=cfg.head_channels,
        attn_channels=cfg.attn_channels,
    ).validate()


def crf_config_from(cfg: PipelineConfig):
    return CrfConfig(
        w1=cfg.crf_w1, w2=cfg.crf_w2, sigma_alpha=cfg.crf_sigma_alpha,
        sigma_beta=cfg.crf_sigma_beta, sigma_gamma=cfg.crf_sigma_gamma,
        sigma_epsilon=cfg.crf_sigma_epsilon, rho=cfg.crf_rho,
        iterations=cfg.crf_iterations,
    ).validate()


def resize_map(arr, h, w):
    """Bilinear resize of a plain (H, W) float map."""
    arr = np.asarray(arr, dtype=np.float64)
    return bilinear_resize(Tensor(arr[None, None]), h, w).data[0, 0]


def resize_image(img, h, w):
    """Bilinear resize of an (H, W, 3) image."""
    chans = np.transpose(np.asarray(img, dtype=np.float64), (2, 0, 1))
    out = bilinear_resize(Tensor(chans[None]), h, w).data[0]
    return np.transpose(out, (1, 2, 0))


def pad_to_stride(img):
    """Reflection-pad trailing spatial dims up to a multiple of 8."""
    h, w = img.shape[:2]
    ph = (-h) % STRIDE_TOTAL
    pw = (-w) % STRIDE_TOTAL
    if ph == 0 and pw == 0:
        return img, (h, w)
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, mode="reflect"), (h, w)


def to_input(img):
    """(H, W, 3) array in 0..255 -> normalized (1, 3, H, W) network input."""
    x = np.asarray(img, dtype=np.float64) / 255.0 - 0.5
    return np.transpose(x, (2, 0, 1))[None]


def segment_image(img, cfg, multilevel=True):
    levels = cfg.seg_levels()
    if not multilevel:
        levels = [levels[1]] * 3  # middle granularity stands in for all three
        return [multi_level_segment(img, levels)[0]]
    return multi_level_segment(img, levels)


def compute_s2(models: Models, feature_map, levels, proj, image_dims):
    """Segment-stream saliency map at image resolution."""
    per_level = []
    for level in levels:
        masks = {s.id: backproject_segment_mask(s, proj)
                 for s in level.segments}
        descs = normalize_descriptors(np.stack([
            build_descriptor(s, level, feature_map, proj, masks)
            for s in level.segments
        ]))
        with no_grad():
            scores = score_segments(descs, models.mlp).data
        per_level.append(scores)
    return render_s2(levels, per_level)


def detect_contours(models: Models, image):
    """Salient-contour probability map from the retrained MS-FCN."""
    x = to_input(image)
    with no_grad():
        s1, _, _ = forward_msfcn(models.contour, models.spec, x)
    return s1.data[0, 0]


def infer(models: Models, image, want=("fused",), multiscale=False,
          fusion_mode="attention", multilevel=True, use_crf=True):
    """Run any requested subset of {s1, s2, fused, contour, crf} on an
    (H, W, 3) image in 0..255.  Maps are returned at image resolution."""
    image = np.asarray(image, dtype=np.float64)
    padded, (h, w) = pad_to_stride(image)
    ph, pw = padded.shape[:2]
    want = set(want)
    if "crf" in want and use_crf:
        want.add("fused")
    out = {}
    needs_s1 = want & {"s1", "fused", "crf"}
    needs_s2 = want & {"s2", "fused", "crf"}
    x = to_input(padded)
    s1_eighth = feature_map = None
    if needs_s1 or needs_s2:
        with no_grad():
            _, s1_8_t, fm_t = forward_msfcn(models.msfcn, models.spec, x)
        s1_eighth = s1_8_t.data
        feature_map = fm_t.data[0]
        if multiscale:
            with no_grad():
                ms = multiscale_infer(models.msfcn, models.spec, x)
            out["s1"] = ms[:h, :w]
            s1_eighth = downsample_by_area(ms)[None, None]
        else:
            out["s1"] = resize_map(s1_eighth[0, 0], ph, pw)[:h, :w]
    s2 = None
    if needs_s2:
        levels = segment_image(padded, models.config, multilevel=multilevel)
        proj = project_rf_centers((ph, pw), feature_map.shape[1:])
        s2 = compute_s2(models, feature_map, levels, proj, (ph, pw))
        out["s2"] = s2[:h, :w]
    if "fused" in want:
        s1_t = Tensor(s1_eighth)
        s2_t = Tensor(downsample_by_area(s2)[None, None])
        with no_grad():
            if fusion_mode == "attention":
                attn = attention_forward(Tensor(feature_map[None]),
                                         models.msfcn, models.spec)
                fused_8 = fuse_saliency(s1_t, s2_t, attn)
            elif fusion_mode == "average":
                fused_8 = fuse_average(s1_t, s2_t)
            elif fusion_mode == "conv1x1":
                fused_8 = fuse_conv1x1(s1_t, s2_t, models.msfcn, models.spec)
            else:
                raise ValueError(f"unknown fusion mode '{fusion_mode}'")
            fused = upsample_fused(fused_8, ph, pw).data[0, 0]
        out["fused"] = np.clip(fused, 0.0, 1.0)[:h, :w]
    if "contour" in want or ("crf" in want and use_crf and
                             models.contour is not None):
        if models.contour is None:
            raise ValueError("contour map requested but no contour model loaded")
        out["contour"] = detect_contours(models, padded)[:h, :w]
    if "crf" in want and use_crf:
        crf_cfg = crf_config_from(models.config)
        embedding = None
        if models.contour is not None:
            aff = contour_affinity(out["contour"], crf_cfg.rho)
            _, embedding = contour_embedding(aff, out["contour"].shape)
        out["crf"] = mean_field_infer(out["fused"], image[:h, :w],
                                      embedding, crf_cfg)
    return out


VARIANTS = {
    "s1": dict(want=("s1",), key="s1"),
    "s2": dict(want=("s2",), key="s2"),
    "fused": dict(want=("fused",), key="fused"),
    "fused_crf": dict(want=("fused", "crf"), key="crf"),
    "fused_ms": dict(want=("fused",), key="fused", multiscale=True),
    "s1_ms": dict(want=("s1",), key="s1", multiscale=True),
    "fused_singlelevel": dict(want=("fused",), key="fused", multilevel=False),
    "fused_avg": dict(want=("fused",), key="fused", fusion_mode="average"),
    "fused_conv1x1": dict(want=("fused",), key="fused", fusion_mode="conv1x1"),
    "s1_backbone": dict(want=("s1",), key="s1", backbone_only=True),
}

DEFAULT_VARIANTS = ("s1", "s2", "fused", "fused_crf")


def ensure_conv1x1_params(store):
    """Fixed fallback parameters for the content-independent 1x1 fusion."""
    if "fusion1x1.w" not in store:
        store.add("fusion1x1.w", Tensor(np.full((1, 2, 1, 1), 3.0)))
        store.add("fusion1x1.b", Tensor(np.array([-3.0])))


def run_variant(models: Models, image, variant):
    opts = dict(VARIANTS[variant])
    key = opts.pop("key")
    backbone_only = opts.pop("backbone_only", False)
    if variant == "fused_conv1x1":
        ensure_conv1x1_params(models.msfcn)
    if backbone_only:
        padded, (h, w) = pad_to_stride(np.asarray(image, dtype=np.float64))
        with no_grad():
            s1, _, _ = single_scale_forward(models.msfcn, models.spec,
                                            to_input(padded))
        return s1.data[0, 0][:h, :w]
    return infer(models, image, **opts)[key]


def evaluate(models: Models, manifest, out_dir, variants=DEFAULT_VARIANTS,
             dataset_name="dataset", log=None):
    """Run the requested variants over a manifest, write metric CSVs and
    saliency PGMs, and return {variant: {metric: value}}."""
    os.makedirs(out_dir, exist_ok=True)
    pairs = list(manifest.load())
    results = {}
    for variant in variants:
        if variant == "fused_crf" and models.contour is None and log:
            log(f"note: no contour model; '{variant}' uses a plain CRF")
        maps = []
        map_dir = os.path.join(out_dir, "maps", variant)
        os.makedirs(map_dir, exist_ok=True)
        for i, (img, _) in enumerate(pairs):
            m = run_variant(models, img, variant)
            maps.append(m)
            write_pgm(os.path.join(map_dir, f"{i:04d}.pgm"), m)
        gts = [gt for _, gt in pairs]
        curve = pr_curve(maps, gts)
        prec, rec, fmeas = adaptive_threshold_prf(maps, gts)
        results[variant] = {
            "maxF": max_f(curve),
            "adaptive_precision": prec,
            "adaptive_recall": rec,
            "adaptive_F": fmeas,
            "MAE": dataset_mae(maps, gts),
        }
        with open(os.path.join(out_dir, f"pr_{variant}.csv"), "w",
                  newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "precision", "recall"])
            for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
                writer.writerow([int(t), repr(float(p)), repr(float(r))])
        if log:
            log(f"{dataset_name} {variant}: "
                + " ".join(f"{k}={v:.4f}" for k, v in results[variant].items()))
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "variant", "metric", "value"])
        for variant, metrics in results.items():
            for metric, value in metrics.items():
                writer.writerow([dataset_name, variant, metric, repr(value)])
    return results
