"""Synthetic shape dataset and directory-based image loading.

Three classes of bright filled shapes (disc, plus-cross, square) are drawn
at seeded random positions and scales over a dim noisy background.  Every
image carries its shape's tight bounding box, which is what makes the
saliency localization test quantitative instead of eyeball-based.

On disk a dataset is one subdirectory per class holding 8-bit grayscale
images (PGM P5 or PNG), with a ``boxes.csv`` of
``filename,x0,y0,x1,y1`` rows at the root.  Class ids are assigned by
lexicographic directory order.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .pgm import read_pgm, write_pgm

CLASS_NAMES = ("disc", "plus", "square")
BOXES_FILE = "boxes.csv"

# (x0, y0, x1, y1) with x = column, y = row, endpoints inclusive
Box = tuple[int, int, int, int]


@dataclass
class Dataset:
    """Images (1, H, W) in [0,1] with integer labels and optional boxes."""

    images: list[np.ndarray]
    labels: list[int]
    class_names: list[str]
    truth_boxes: list[Box | None] | None = None

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but "
                             f"{len(self.labels)} labels")
        if self.truth_boxes is not None and \
                len(self.truth_boxes) != len(self.images):
            raise ValueError("truth_boxes length does not match images")
        shapes = {img.shape for img in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images disagree on shape: {sorted(shapes)}")
        for label in self.labels:
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"label {label} out of range for "
                                 f"{len(self.class_names)} classes")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_size(self) -> int:
        return self.images[0].shape[-1]

    def subset(self, indices) -> "Dataset":
        idx = [int(i) for i in indices]
        boxes = None
        if self.truth_boxes is not None:
            boxes = [self.truth_boxes[i] for i in idx]
        return Dataset(images=[self.images[i] for i in idx],
                       labels=[self.labels[i] for i in idx],
                       class_names=list(self.class_names),
                       truth_boxes=boxes)


def _shape_mask(kind: str, size: int, cy: int, cx: int,
                extent: int) -> np.ndarray:
    rr, cc = np.ogrid[:size, :size]
    dy, dx = np.abs(rr - cy), np.abs(cc - cx)
    if kind == "disc":
        return (rr - cy) ** 2 + (cc - cx) ** 2 <= extent ** 2
    if kind == "square":
        return np.maximum(dy, dx) <= extent
    if kind == "plus":
        arm = max(2, extent // 3)
        return ((dy <= arm) & (dx <= extent)) | ((dx <= arm) & (dy <= extent))
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_synthetic(per_class: int, image_size: int = 64,
                       seed: int = 0) -> Dataset:
    """Seeded dataset of ``per_class`` images for each of the 3 classes.

    Shapes are brighter than the background everywhere (shape pixels in
    [0.7, 1.0], background in [0, 0.1]) and each truth box is the tight
    bounding box of the shape mask, so the brightest pixel always lies
    inside the box.  Extents are sized so the largest truth box covers
    under 25% of the image, keeping box-hit chance for a uniform random
    point below 1 in 4.
    """
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    if image_size < 16:
        raise ValueError(f"image_size must be >= 16, got {image_size}")
    rng = np.random.default_rng(seed)
    lo = max(3, round(image_size * 0.20))
    hi = max(lo + 1, round(image_size * 0.234))
    margin = 2
    images, labels, boxes = [], [], []
    for label, kind in enumerate(CLASS_NAMES):
        for _ in range(per_class):
            extent = int(rng.integers(lo, hi + 1))
            span_lo = margin + extent
            span_hi = image_size - 1 - margin - extent
            cy = int(rng.integers(span_lo, span_hi + 1))
            cx = int(rng.integers(span_lo, span_hi + 1))
            img = rng.uniform(0.0, 0.10, (image_size, image_size))
            mask = _shape_mask(kind, image_size, cy, cx, extent)
            img[mask] = rng.uniform(0.7, 1.0, int(mask.sum()))
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            boxes.append((int(cols[0]), int(rows[0]),
                          int(cols[-1]), int(rows[-1])))
            images.append(img[None])
            labels.append(label)
    return Dataset(images=images, labels=labels,
                   class_names=list(CLASS_NAMES), truth_boxes=boxes)


def quantize_image(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 pixels by round(v * 255)."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_dataset(dataset: Dataset, out_dir: str) -> list[str]:
    """Write class directories of PGMs plus boxes.csv; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    per_class_counter = dict.fromkeys(range(len(dataset.class_names)), 0)
    rows, paths = [], []
    for i, (img, label) in enumerate(zip(dataset.images, dataset.labels)):
        name = dataset.class_names[label]
        class_dir = os.path.join(out_dir, name)
        os.makedirs(class_dir, exist_ok=True)
        fname = f"{per_class_counter[label]:04d}.pgm"
        per_class_counter[label] += 1
        rel = f"{name}/{fname}"
        write_pgm(os.path.join(class_dir, fname), quantize_image(img[0]))
        paths.append(rel)
        if dataset.truth_boxes is not None and \
                dataset.truth_boxes[i] is not None:
            rows.append((rel,) + dataset.truth_boxes[i])
    if rows:
        with open(os.path.join(out_dir, BOXES_FILE), "w", newline="",
                  encoding="ascii") as fh:
            csv.writer(fh).writerows(rows)
    return paths


def _load_image(path: str) -> np.ndarray:
    """One grayscale file to a (H, W) uint8 array."""
    if path.endswith(".pgm"):
        return read_pgm(path)
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale (mode L), "
                             f"got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def _resize_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    return np.asarray(Image.fromarray(pixels).resize((size, size),
                                                     Image.BILINEAR),
                      dtype=np.uint8)


def load_directory(root: str, image_size: int = 64) -> Dataset:
    """Load ``root/<class>/<image>.pgm|.png`` into a Dataset.

    Classes are the sorted subdirectory names; images are scaled to [0,1]
    and bilinearly resized to ``image_size`` when their size differs (box
    coordinates are rescaled to match).
    """
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} is not a directory")
    class_names = sorted(d for d in os.listdir(root)
                         if os.path.isdir(os.path.join(root, d)))
    if not class_names:
        raise ValueError(f"no class subdirectories under {root!r}")
    box_index: dict[str, Box] = {}
    boxes_path = os.path.join(root, BOXES_FILE)
    have_boxes = os.path.isfile(boxes_path)
    if have_boxes:
        with open(boxes_path, newline="", encoding="ascii") as fh:
            for row in csv.reader(fh):
                if len(row) != 5:
                    raise ValueError(f"{boxes_path}: expected 5 columns, "
                                     f"got {len(row)}: {row!r}")
                box_index[row[0]] = tuple(int(v) for v in row[1:])
    images, labels, boxes = [], [], []
    for label, name in enumerate(class_names):
        class_dir = os.path.join(root, name)
        files = sorted(f for f in os.listdir(class_dir)
                       if f.endswith((".pgm", ".png")))
        if not files:
            raise ValueError(f"class directory {class_dir!r} holds no "
                             f".pgm or .png images")
        for fname in files:
            pixels = _load_image(os.path.join(class_dir, fname))
            scale = image_size / pixels.shape[0]
            if pixels.shape != (image_size, image_size):
                pixels = _resize_bilinear(pixels, image_size)
            images.append(pixels.astype(float)[None] / 255.0)
            labels.append(label)
            box = box_index.get(f"{name}/{fname}")
            if box is not None and scale != 1.0:
                box = tuple(min(image_size - 1, int(v * scale)) for v in box)
            boxes.append(box)
    truth = boxes if have_boxes else None
    return Dataset(images=images, labels=labels, class_names=class_names,
                   truth_boxes=truth)
