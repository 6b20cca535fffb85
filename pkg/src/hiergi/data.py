"""Dataset ingestion, stratified folds, minority oversampling, preprocessing
and augmentation.

Manifest formats: classification CSV with header `path,finding`; segmentation
CSV with header `image_path,mask_path`. Masks are 8-bit grayscale images,
values > 127 map to foreground.
"""

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from .hierarchy import LabelHierarchy

DEFAULT_SIZE = (512, 640)  # (height, width)
MASK_THRESHOLD = 127


@dataclass
class SampleManifest:
    records: list  # (image path, finding name)
    hierarchy: LabelHierarchy

    def __len__(self):
        return len(self.records)

    def labels(self):
        return [self.hierarchy.finding_index(f) for _, f in self.records]


@dataclass
class MaskPair:
    image_path: str
    mask_path: str


@dataclass
class FoldPlan:
    k: int
    assignment: np.ndarray  # record index -> fold id
    seed: int

    def fold_indices(self, fold):
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignment != fold)


def _resolve(p, root):
    return p if os.path.isabs(p) or root is None else os.path.join(root, p)


def load_class_manifest(path, hierarchy: LabelHierarchy, root=None) -> SampleManifest:
    """Relative manifest paths are resolved against root (default: the
    manifest's own directory)."""
    if root is None:
        root = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["path", "finding"]:
            raise ValueError(
                f"{path}: expected header 'path,finding', got {reader.fieldnames}"
            )
        for row in reader:
            p, finding = row["path"], row["finding"]
            if finding not in hierarchy.findings:
                raise ValueError(f"{path}: unknown finding {finding!r} for {p}")
            if p in seen:
                raise ValueError(f"{path}: duplicate image path {p}")
            seen.add(p)
            records.append((_resolve(p, root), finding))
    if not records:
        raise ValueError(f"{path}: empty manifest")
    return SampleManifest(records, hierarchy)


def load_seg_manifest(path, root=None):
    if root is None:
        root = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["image_path", "mask_path"]:
            raise ValueError(
                f"{path}: expected header 'image_path,mask_path', got {reader.fieldnames}"
            )
        for row in reader:
            pairs.append(MaskPair(_resolve(row["image_path"], root),
                                  _resolve(row["mask_path"], root)))
    if not pairs:
        raise ValueError(f"{path}: empty manifest")
    return pairs


def build_folds(labels, k=5, seed=0) -> FoldPlan:
    """Stratified k-fold assignment: per-class counts differ by <= 1 across folds.

    labels: per-record class ids (for segmentation pass a constant vector).
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    assignment = np.full(len(labels), -1, dtype=np.int64)
    # rotate the fold offset between classes so remainders spread evenly
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            warnings.warn(
                f"class {cls} has only {len(idx)} records for {k} folds; "
                "assigning round-robin"
            )
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            assignment[i] = (offset + j) % k
        offset += len(idx)
    return FoldPlan(k=k, assignment=assignment, seed=seed)


def oversample_epoch(labels, seed=0, indices=None):
    """Balanced epoch index sequence: every class contributes max_count entries.

    Each class's records are tiled ceil(max_count / count) times, truncated to
    max_count (truncation order randomized by seed), then the whole epoch is
    shuffled.
    """
    labels = np.asarray(labels)
    if indices is None:
        indices = np.arange(len(labels))
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("empty subset")
    sub_labels = labels[indices]
    rng = np.random.default_rng(seed)
    counts = {c: np.sum(sub_labels == c) for c in np.unique(sub_labels)}
    max_count = max(counts.values())
    epoch = []
    for c in sorted(counts):
        idx = indices[sub_labels == c]
        idx = rng.permutation(idx)
        reps = -(-max_count // len(idx))  # ceil
        epoch.append(np.tile(idx, reps)[:max_count])
    epoch = np.concatenate(epoch)
    rng.shuffle(epoch)
    return epoch


def _resize_image(img, size):
    h, w = size
    return img.resize((w, h), Image.BILINEAR)


def preprocess(image, mask=None, size=DEFAULT_SIZE, normalize=None):
    """Load/resize to a (3, H, W) float tensor in [0, 1]; masks to (1, H, W) {0,1}.

    image/mask may be paths or PIL images. Images are resized bilinearly, masks
    with nearest-neighbor. normalize, if given, is (mean, std) per channel.
    """
    path = image if isinstance(image, str) else None
    if isinstance(image, str):
        try:
            image = Image.open(image)
        except (OSError, ValueError) as e:
            raise ValueError(f"cannot decode image {path}: {e}") from e
    image = image.convert("RGB")
    src_size = image.size

    if mask is not None:
        mpath = mask if isinstance(mask, str) else None
        if isinstance(mask, str):
            try:
                mask = Image.open(mask)
            except (OSError, ValueError) as e:
                raise ValueError(f"cannot decode mask {mpath}: {e}") from e
        mask = mask.convert("L")
        if mask.size != src_size:
            raise ValueError(
                f"mask size {mask.size} does not match image size {src_size}"
                + (f" for {mpath or path}" if mpath or path else "")
            )

    h, w = size
    x = torch.from_numpy(
        np.asarray(_resize_image(image, size), dtype=np.float32) / 255.0
    ).permute(2, 0, 1)
    if normalize is not None:
        mean, std = normalize
        x = (x - torch.tensor(mean).view(3, 1, 1)) / torch.tensor(std).view(3, 1, 1)

    if mask is None:
        return x
    m = mask.resize((w, h), Image.NEAREST)
    m = (np.asarray(m) > MASK_THRESHOLD).astype(np.float32)
    return x, torch.from_numpy(m).unsqueeze(0)


@dataclass
class AugmentConfig:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    max_rotation: float = 15.0  # degrees
    jitter: float = 0.2  # fractional brightness/contrast/saturation range


def augment(image, mask=None, seed=None, rng=None, config=AugmentConfig()):
    """Random flips/rotation (applied to image and mask alike) plus photometric
    jitter (image only). Deterministic for a fixed seed."""
    if rng is None:
        rng = np.random.default_rng(seed)

    do_h = rng.random() < config.hflip_prob
    do_v = rng.random() < config.vflip_prob
    angle = float(rng.uniform(-config.max_rotation, config.max_rotation))
    b, c, s = 1.0 + rng.uniform(-config.jitter, config.jitter, size=3)

    if do_h:
        image = TF.hflip(image)
    if do_v:
        image = TF.vflip(image)
    image = TF.rotate(image, angle, interpolation=InterpolationMode.BILINEAR)
    image = TF.adjust_brightness(image, b)
    image = TF.adjust_contrast(image, c)
    image = TF.adjust_saturation(image, s)
    image = image.clamp(0.0, 1.0)

    if mask is None:
        return image
    if do_h:
        mask = TF.hflip(mask)
    if do_v:
        mask = TF.vflip(mask)
    mask = TF.rotate(mask, angle, interpolation=InterpolationMode.NEAREST)
    return image, mask
