"""Procedural concealed-blob corpus for desk-scale pipeline runs and tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .raster import GrayMask, save_mask
from .seeding import stable_seed


def make_blob_mask(seed: int, size: int = 64) -> GrayMask:
    """One binary ground-truth mask: one or two soft-edged elliptical blobs."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    fg = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        cx = rng.uniform(size * 0.25, size * 0.75)
        cy = rng.uniform(size * 0.25, size * 0.75)
        rx = rng.uniform(size * 0.12, size * 0.22)
        ry = rng.uniform(size * 0.12, size * 0.22)
        fg |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if not fg.any():
        fg[size // 2, size // 2] = True
    return GrayMask.from_array(fg.astype(np.float32))


def make_scribble_annotation(
    gt: GrayMask, seed: int, points_per_class: int = 5
) -> GrayMask:
    """Sparse point supervision raster: 1.0 on sampled foreground pixels,
    0.0 on sampled background pixels, 0.5 (unknown) elsewhere."""
    rng = np.random.default_rng(seed)
    ann = np.full(gt.shape, 0.5, dtype=np.float32)
    fg = gt.values >= 0.5
    for target, value in ((fg, 1.0), (~fg, 0.0)):
        ys, xs = np.nonzero(target)
        take = min(points_per_class, ys.size)
        idx = rng.choice(ys.size, size=take, replace=False)
        ann[ys[idx], xs[idx]] = value
    return GrayMask.from_array(ann)


def make_corpus(root, count: int = 16, size: int = 64, seed: int = 0) -> Path:
    """Write a corpus (images, labels, scribbles, manifest) under ``root``.

    The synthetic image of each item is its own ground-truth raster; the
    oracle's error model supplies all the "concealment". Returns the path of
    the manifest JSON.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    items = []
    for i in range(count):
        image_id = f"img{i:03d}"
        gt = make_blob_mask(stable_seed(seed, "blob", i), size)
        ann = make_scribble_annotation(gt, stable_seed(seed, "ann", i))
        label_path = root / f"{image_id}_label.mskf"
        image_path = root / f"{image_id}_image.mskf"
        ann_path = root / f"{image_id}_ann.mskf"
        save_mask(gt, label_path)
        save_mask(gt, image_path)
        save_mask(ann, ann_path)
        items.append(
            {
                "id": image_id,
                "image": str(image_path),
                "annotation": str(ann_path),
                "label": str(label_path),
            }
        )
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps(items, indent=1, sort_keys=True))
    return manifest
