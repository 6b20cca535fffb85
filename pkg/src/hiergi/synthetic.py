"""Desk-scale synthetic datasets in the repo manifest formats.

Classification: one distinctive base color per finding plus texture noise, so a
small CNN can separate all classes quickly. Segmentation: bright elliptical
blobs on a dark noisy background with exact masks.
"""

import colorsys
import csv
import os

import numpy as np
from PIL import Image

from .hierarchy import LabelHierarchy


def class_palette(n):
    """n well-separated RGB colors (0..255)."""
    # evenly spaced hues plus a decorrelated saturation per class: both are
    # cross-channel ratios, so they survive per-sample intensity normalization
    # inside the models, and the second axis keeps hue-adjacent classes apart
    colors = []
    for i in range(n):
        sat = 0.45 + 0.55 * ((i * 7) % n) / max(n - 1, 1)
        r, g, b = colorsys.hsv_to_rgb(i / n, sat, 0.9)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def make_classification(out_dir, n, hierarchy: LabelHierarchy, seed=0,
                        image_size=(128, 160)):
    """Write n images (round-robin over findings) plus manifest.csv with
    relative paths. Returns the manifest path."""
    h, w = image_size
    rng = np.random.default_rng(seed)
    palette = class_palette(hierarchy.n_find)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rows = []
    for i in range(n):
        cls = i % hierarchy.n_find
        base = np.array(palette[cls], dtype=np.float64)
        img = base[None, None, :] + rng.normal(0, 18, size=(h, w, 3))
        img = np.clip(img, 0, 255).astype(np.uint8)
        name = f"{hierarchy.findings[cls]}_{i:05d}.png"
        Image.fromarray(img).save(os.path.join(img_dir, name))
        rows.append((os.path.join("images", name), hierarchy.findings[cls]))
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as f:
        wcsv = csv.writer(f)
        wcsv.writerow(["path", "finding"])
        wcsv.writerows(rows)
    return manifest


def make_segmentation(out_dir, n, seed=0, image_size=(128, 160)):
    """Write n blob image/mask pairs plus manifest.csv. Returns the manifest path."""
    h, w = image_size
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    yy, xx = np.mgrid[0:h, 0:w]
    rows = []
    for i in range(n):
        cy = rng.uniform(0.25 * h, 0.75 * h)
        cx = rng.uniform(0.25 * w, 0.75 * w)
        ry = rng.uniform(0.10 * h, 0.25 * h)
        rx = rng.uniform(0.10 * w, 0.25 * w)
        mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1.0

        img = rng.normal(60, 12, size=(h, w, 3))
        blob_color = np.array([190, 120, 110]) + rng.normal(0, 10, size=3)
        img[mask] = blob_color[None, :] + rng.normal(0, 12, size=(mask.sum(), 3))
        img = np.clip(img, 0, 255).astype(np.uint8)

        img_name, mask_name = f"img_{i:05d}.png", f"mask_{i:05d}.png"
        Image.fromarray(img).save(os.path.join(img_dir, img_name))
        Image.fromarray((mask * 255).astype(np.uint8)).save(
            os.path.join(mask_dir, mask_name))
        rows.append((os.path.join("images", img_name),
                     os.path.join("masks", mask_name)))
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as f:
        wcsv = csv.writer(f)
        wcsv.writerow(["image_path", "mask_path"])
        wcsv.writerows(rows)
    return manifest
