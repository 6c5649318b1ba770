"""Dataset manifests and the synthetic shape corpus.

A manifest is a text file with one ``image<TAB>mask`` pair per line, paths
relative to the manifest.  The synthetic generator draws 1-3 contrasting
shapes (ellipses, rectangles, noisy blobs) over a textured background and
writes PPM images with exact binary PGM masks; byte-identical for a seed.
Half the shapes are hollow (contrasting outline over background texture with
the full region labelled salient), so saliency is a region property that
local appearance alone cannot recover.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import read_image, read_mask, write_pgm, write_ppm


@dataclass
class ManifestEntry:
    image_path: str
    mask_path: str


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    def load(self):
        """Yield (image (H,W,3) in 0..255, binary mask (H,W)) pairs."""
        for e in self.entries:
            img = read_image(e.image_path)
            mask = read_mask(e.mask_path)
            if img.shape[:2] != mask.shape:
                raise ValueError(
                    f"{e.image_path}: image dims {img.shape[:2]} != "
                    f"mask dims {mask.shape}"
                )
            yield img, mask


def save_manifest(manifest, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            f.write(f"{os.path.relpath(e.image_path, base)}\t"
                    f"{os.path.relpath(e.mask_path, base)}\n")


def load_manifest(path, split="train"):
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'image<TAB>mask', got {line!r}"
                )
            entries.append(ManifestEntry(os.path.join(base, parts[0]),
                                         os.path.join(base, parts[1])))
    return DatasetManifest(entries=entries, split=split)


def _texture(rng, size, base_color):
    img = np.ones((size, size, 3)) * base_color
    img += rng.normal(0.0, 8.0, size=(size, size, 3))
    slope = gaussian_filter(rng.normal(0.0, 40.0, size=(size, size)), size / 6)
    img += slope[:, :, None]
    return img


def _shape_masks(rng, size, kind, scale=(0.14, 0.30)):
    """(full mask, inner mask) for one random shape; the inner mask is the
    same shape shrunk toward its center."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy = rng.uniform(0.2 * size, 0.8 * size)
    cx = rng.uniform(0.2 * size, 0.8 * size)
    ry = rng.uniform(scale[0] * size, scale[1] * size)
    rx = rng.uniform(scale[0] * size, scale[1] * size)
    f = rng.uniform(0.5, 0.7)
    if kind == "rectangle":
        full = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        inner = (np.abs(yy - cy) <= f * ry) & (np.abs(xx - cx) <= f * rx)
        return full, inner
    dist = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    if kind == "ellipse":
        return dist <= 1.0, dist <= f * f
    # blob: ellipse boundary perturbed by smooth noise
    wobble = gaussian_filter(rng.normal(0.0, 1.0, size=(size, size)), size / 10)
    wobble = wobble / (np.abs(wobble).max() + 1e-12)
    return dist <= 1.0 + 0.8 * wobble, dist <= (f * f) * (1.0 + 0.8 * wobble)


def _contrasting_color(rng, base_color):
    while True:
        color = rng.uniform(0, 255, size=3)
        if np.linalg.norm(color - base_color) > 140.0:
            return color


def generate_synthetic_dataset(n, seed, out_dir, size=64, split="train"):
    """Write n images + exact masks under out_dir and return the manifest."""
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    entries = []
    kinds = ("ellipse", "rectangle", "blob")
    for i in range(n):
        while True:
            base_color = rng.uniform(30, 225, size=3)
            img = _texture(rng, size, base_color)
            mask = np.zeros((size, size), dtype=bool)
            for _ in range(int(rng.integers(1, 4))):
                kind = kinds[int(rng.integers(0, len(kinds)))]
                full, inner = _shape_masks(rng, size, kind)
                color = _contrasting_color(rng, base_color)
                tex = rng.normal(0.0, 10.0, size=(size, size, 3))
                # half the shapes are hollow: only the outline contrasts with
                # the background while the whole region is labelled salient,
                # so local appearance alone cannot recover the interior
                paint = full & ~inner if rng.uniform() < 0.5 else full
                img = np.where(paint[:, :, None], color + tex, img)
                mask |= full
            frac = mask.mean()
            if 0.03 <= frac <= 0.6:
                break
        # soften edges: the mask stays sharp while the image shows gradient
        # ramps, so boundaries must be localized, not just detected
        blur = rng.uniform(2.2, 3.4)
        img = gaussian_filter(img, sigma=(blur, blur, 0.0))
        img = np.clip(img, 0, 255)
        img_path = os.path.join(img_dir, f"{split}_{i:04d}.ppm")
        mask_path = os.path.join(mask_dir, f"{split}_{i:04d}.pgm")
        write_ppm(img_path, img)
        write_pgm(mask_path, mask.astype(np.float64))
        entries.append(ManifestEntry(img_path, mask_path))
    manifest = DatasetManifest(entries=entries, split=split)
    save_manifest(manifest, os.path.join(out_dir, f"{split}.manifest"))
    return manifest
