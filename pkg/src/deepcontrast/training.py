"""Alternate training of the two streams plus the contour model.

Phase 0 trains the segment-scoring MLP alone on descriptors from the
initial backbone.  Each alternation then (a) trains MS-FCN and the
attention module for one epoch on the class-balanced cross-entropy of the
fused map with stream 2 frozen, and (b) fine-tunes the MLP for one epoch
on recomputed descriptors with the squared-error loss.  Horizontal
flipping doubles the stream online; checkpoints persist each phase.
"""

import os
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .fusion import attention_forward, downsample_by_area, fuse_saliency
from .network import build_msfcn, forward_msfcn, prepare_contour_gt
from .pipeline import (
    Models, compute_s2, resize_image, resize_map, segment_image,
    spec_from_config, to_input,
)
from .segmentation import segment_saliency_label
from .segments import (
    backproject_segment_mask, build_descriptor, build_mlp, descriptor_length,
    normalize_descriptors, project_rf_centers, score_segments,
)
from .tensor import (
    OptimizerState, Tensor, balanced_bce_loss, bilinear_resize, no_grad,
    sgd_step, squared_error_loss,
)
from .weights import save_weights

NEW_LAYER_PREFIXES = ("side", "fuse", "attn", "head")


@dataclass
class TrainSample:
    image: np.ndarray  # (S, S, 3) in 0..255
    gt: np.ndarray  # (S, S) binary
    x: np.ndarray  # (1, 3, S, S) network input
    levels: list = None
    labels: list = None  # per level: binary label per segment


def load_samples(manifest, cfg: PipelineConfig, segment=True):
    size = cfg.image_size
    samples = []
    for img, mask in manifest.load():
        if img.shape[:2] != (size, size):
            img = resize_image(img, size, size)
            mask = (resize_map(mask, size, size) >= 0.5).astype(np.float64)
        sample = TrainSample(image=img, gt=mask, x=to_input(img))
        if segment:
            sample.levels = segment_image(img, cfg)
            sample.labels = [
                [segment_saliency_label(s, mask) for s in level.segments]
                for level in sample.levels
            ]
        samples.append(sample)
    return samples


def _lr_scales(store, cfg):
    """Per-parameter learning rates: newly added layers train faster than
    the backbone stages."""
    scales = {}
    for name in store.names():
        is_new = name.startswith(NEW_LAYER_PREFIXES)
        scales[name] = cfg.lr_new if is_new else cfg.lr_base
    return scales


def extract_descriptors(models: Models, sample: TrainSample, proj):
    """(descriptor matrix, label vector) over all three levels; backbone
    features are recomputed, so call this after every stream-1 phase."""
    with no_grad():
        _, _, fm_t = forward_msfcn(models.msfcn, models.spec, sample.x)
    fm = fm_t.data[0]
    descs, labels = [], []
    for level, level_labels in zip(sample.levels, sample.labels):
        masks = {s.id: backproject_segment_mask(s, proj)
                 for s in level.segments}
        for seg, lab in zip(level.segments, level_labels):
            descs.append(build_descriptor(seg, level, fm, proj, masks))
            labels.append(lab)
    return normalize_descriptors(np.stack(descs)), \
        np.array(labels, dtype=np.float64)


def _check_finite(loss, checkpoint_hint):
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite training loss; last good checkpoint: {checkpoint_hint}"
        )


def train_mlp_epochs(models: Models, samples, proj, epochs, state, cfg,
                     checkpoint_hint=""):
    """Train the segment MLP on frozen backbone features for some epochs."""
    per_image = [extract_descriptors(models, s, proj) for s in samples]
    params = models.mlp.parameters()
    total = 0.0
    for _ in range(epochs):
        total = 0.0
        for start in range(0, len(per_image), cfg.batch_images):
            batch = per_image[start:start + cfg.batch_images]
            descs = np.concatenate([d for d, _ in batch])
            labels = np.concatenate([l for _, l in batch])
            models.mlp.zero_grads()
            scores = score_segments(Tensor(descs), models.mlp)
            loss = squared_error_loss(scores, labels) * Tensor(1.0 / len(labels))
            _check_finite(loss.item(), checkpoint_hint)
            loss.backward()
            sgd_step(params, state)
            total += loss.item()
    return total


def train_stream1_epoch(models: Models, samples, proj, state, cfg,
                        checkpoint_hint=""):
    """One epoch over images (plus flipped copies) with stream 2 frozen."""
    # stream-2 maps are fixed for the whole phase
    s2_maps = []
    for s in samples:
        with no_grad():
            _, _, fm_t = forward_msfcn(models.msfcn, models.spec, s.x)
        s2_maps.append(compute_s2(models, fm_t.data[0], s.levels, proj,
                                  s.gt.shape))
    params = models.msfcn.parameters()
    scales = _lr_scales(models.msfcn, cfg)
    total = 0.0
    size = cfg.image_size
    for sample, s2 in zip(samples, s2_maps):
        for flip in (False, True):
            x = sample.x[:, :, :, ::-1].copy() if flip else sample.x
            gt = sample.gt[:, ::-1] if flip else sample.gt
            s2f = s2[:, ::-1] if flip else s2
            models.msfcn.zero_grads()
            s1, s1_8, fm = forward_msfcn(models.msfcn, models.spec, x)
            attn = attention_forward(fm, models.msfcn, models.spec)
            s2_8 = Tensor(downsample_by_area(s2f)[None, None])
            fused_8 = fuse_saliency(s1_8, s2_8, attn)
            fused = bilinear_resize(fused_8, size, size)
            # fused loss trains the attention module; the direct S1 term
            # keeps stream 1 supervised even when the attention prefers
            # stream 2.  Per-pixel normalization keeps gradient magnitudes
            # independent of the image area.
            loss = (balanced_bce_loss(fused, gt[None, None])
                    + balanced_bce_loss(s1, gt[None, None])) \
                * Tensor(0.5 / gt.size)
            _check_finite(loss.item(), checkpoint_hint)
            loss.backward()
            sgd_step(params, state, lr_scale=scales)
            total += loss.item()
    return total / (2 * len(samples))


def alternate_train(cfg: PipelineConfig, manifest, out_dir, log=None):
    """Full alternate training; returns the trained Models bundle."""
    os.makedirs(out_dir, exist_ok=True)
    spec = spec_from_config(cfg)
    msfcn = build_msfcn(spec, seed=cfg.seed)
    mlp = build_mlp(descriptor_length(spec.feature_channels), cfg.mlp_hidden,
                    seed=cfg.seed + 1)
    models = Models(config=cfg, spec=spec, msfcn=msfcn, mlp=mlp)
    samples = load_samples(manifest, cfg)
    size = cfg.image_size
    proj = project_rf_centers((size, size), (size // 8, size // 8))

    mlp_state = OptimizerState(base_lr=cfg.mlp_lr, momentum=cfg.momentum,
                               weight_decay=cfg.weight_decay, power=cfg.power,
                               max_iter=max(1, (cfg.init_mlp_epochs
                                                + cfg.alternations)
                                            * -(-len(samples) // cfg.batch_images)))
    s1_state = OptimizerState(base_lr=1.0, momentum=cfg.momentum,
                              weight_decay=cfg.weight_decay, power=cfg.power,
                              max_iter=max(1, cfg.alternations
                                           * 2 * len(samples)))

    def checkpoint(tag):
        mp = os.path.join(out_dir, f"msfcn_{tag}.dclw")
        save_weights(models.msfcn, mp)
        save_weights(models.mlp, os.path.join(out_dir, f"mlp_{tag}.dclw"))
        return mp

    last = checkpoint("init")
    loss0 = train_mlp_epochs(models, samples, proj, cfg.init_mlp_epochs,
                             mlp_state, cfg, checkpoint_hint=last)
    if log:
        log(f"phase 0 (segment MLP init): loss {loss0:.5f}")
    last = checkpoint("phase0")
    for alt in range(cfg.alternations):
        l1 = train_stream1_epoch(models, samples, proj, s1_state, cfg,
                                 checkpoint_hint=last)
        last = checkpoint(f"alt{alt + 1}a")
        l2 = train_mlp_epochs(models, samples, proj, 1, mlp_state, cfg,
                              checkpoint_hint=last)
        last = checkpoint(f"alt{alt + 1}b")
        if log:
            log(f"alternation {alt + 1}/{cfg.alternations}: "
                f"stream1 bce {l1:.5f}, stream2 sse {l2:.5f}")
    save_weights(models.msfcn, os.path.join(out_dir, "msfcn.dclw"))
    save_weights(models.mlp, os.path.join(out_dir, "mlp.dclw"))
    return models


def train_contour(cfg: PipelineConfig, manifest, out_dir, epochs=None,
                  log=None):
    """Retrain an MS-FCN on salient-region contours (separate weight store);
    the class balance follows the contour-pixel fraction per image."""
    os.makedirs(out_dir, exist_ok=True)
    spec = spec_from_config(cfg)
    store = build_msfcn(spec, seed=cfg.seed + 2)
    samples = load_samples(manifest, cfg, segment=False)
    contour_gts = [prepare_contour_gt(s.gt) for s in samples]
    epochs = cfg.alternations if epochs is None else epochs
    state = OptimizerState(base_lr=1.0, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay, power=cfg.power,
                           max_iter=max(1, epochs * 2 * len(samples)))
    scales = _lr_scales(store, cfg)
    params = store.parameters()
    path = os.path.join(out_dir, "contour.dclw")
    save_weights(store, path)
    for epoch in range(epochs):
        total = 0.0
        for sample, cgt in zip(samples, contour_gts):
            for flip in (False, True):
                x = sample.x[:, :, :, ::-1].copy() if flip else sample.x
                gt = cgt[:, ::-1] if flip else cgt
                store.zero_grads()
                s1, _, _ = forward_msfcn(store, spec, x)
                loss = balanced_bce_loss(s1, gt[None, None]) \
                    * Tensor(1.0 / gt.size)
                _check_finite(loss.item(), path)
                loss.backward()
                sgd_step(params, state, lr_scale=scales)
                total += loss.item()
        save_weights(store, path)
        if log:
            log(f"contour epoch {epoch + 1}/{epochs}: "
                f"bce {total / (2 * len(samples)):.5f}")
    return store
