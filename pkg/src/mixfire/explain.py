"""Gradient-weighted class activation maps over the tokenizer features.

For a target class c, the map weights each channel A^k of the final 1x1
convolution output by the spatial mean of the pre-softmax logit's gradient
with respect to that channel, sums the weighted channels, and clamps at
zero.  Only positively contributing regions survive, which is what makes
the map readable as "where the model looked".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ModelConfig, ModelParams, forward_trace
from .pgm import write_pgm
from .tensor import Tensor, constant, mul, no_grad, reset_tape, sum_all

FEATURE_LAYER = "tokenizer.weight"


@dataclass
class GradCamMap:
    """Nonnegative saliency values on the feature grid for one class."""

    values: np.ndarray  # (H, W) floats, all >= 0
    target_class: int
    feature_layer: str = FEATURE_LAYER

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"map must be 2-D, got {self.values.shape}")
        if np.any(self.values < 0):
            raise ValueError("map values must be nonnegative")


def gradcam(params: ModelParams, image, config: ModelConfig,
            target_class: int) -> GradCamMap:
    """Saliency for ``target_class`` on one (1, H, W) grayscale image.

    Backpropagates the class logit (not the softmax output) to the
    tokenizer's convolutional feature maps, averages each channel's
    gradient spatially into a weight, and returns relu(sum_k w_k A^k).
    """
    num_classes = config.backbone.num_classes
    if not 0 <= target_class < num_classes:
        raise ValueError(f"target_class {target_class} out of range "
                         f"[0, {num_classes})")
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image,
                                                                    float))
    batch = Tensor(img.data.reshape((1,) + img.data.shape[-3:]))
    reset_tape()
    trace = forward_trace(params, batch, config)
    one_hot = np.zeros((1, num_classes))
    one_hot[0, target_class] = 1.0
    logit = sum_all(mul(trace.logits, constant(one_hot)))
    logit.backward(retain=[trace.conv_features])
    grads = trace.conv_features.grad[0]      # (d_model, Hf, Wf)
    features = trace.conv_features.data[0]
    weights = grads.mean(axis=(1, 2))        # spatial mean per channel
    raw = np.tensordot(weights, features, axes=(0, 0))
    return GradCamMap(values=np.maximum(raw, 0.0),
                      target_class=target_class)


def upsample_nearest(values: np.ndarray | GradCamMap,
                     target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor enlargement to ``target`` = (H, W).

    Source index for output row i is floor(i * src_h / dst_h), likewise for
    columns; the value set is unchanged.
    """
    src = values.values if isinstance(values, GradCamMap) else \
        np.asarray(values, dtype=float)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {src.shape}")
    th, tw = int(target[0]), int(target[1])
    sh, sw = src.shape
    if th < sh or tw < sw:
        raise ValueError(f"target {th}x{tw} smaller than source {sh}x{sw}")
    rows = (np.arange(th) * sh) // th
    cols = (np.arange(tw) * sw) // tw
    return src[np.ix_(rows, cols)]


def peak_coordinates(values: np.ndarray | GradCamMap) -> tuple[int, int]:
    """(row, col) of the map's maximum, ties broken by region centroid.

    Upsampled maps are constant over blocks, so the maximum is usually a
    tied region rather than a single pixel.  Taking the rounded centroid
    of all maximal pixels names the center of that region, which is the
    natural single-point reading of "where the map peaks"; first-index
    argmax would systematically name the region's top-left corner.
    """
    arr = values.values if isinstance(values, GradCamMap) else \
        np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    rows, cols = np.nonzero(arr == arr.max())
    return int(np.rint(rows.mean())), int(np.rint(cols.mean()))


def quantize_map(values: np.ndarray) -> np.ndarray:
    """Min-max scale a map to uint8 0..255; a constant map becomes zeros."""
    arr = np.asarray(values, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8)
    return np.rint((arr - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_heatmap(cam: GradCamMap, path: str,
                   upsample_to: tuple[int, int] | None = None) -> None:
    """Write the map as a binary PGM, min-max normalized to 0..255.

    ``upsample_to`` optionally enlarges the map to input resolution first.
    A side-car text file (same path + ".txt") records the class index and
    the value range so the quantization is invertible to map scale.
    """
    with no_grad():
        values = cam.values
        if upsample_to is not None:
            values = upsample_nearest(values, upsample_to)
        write_pgm(path, quantize_map(values))
        with open(path + ".txt", "w", encoding="ascii") as fh:
            fh.write(f"class={cam.target_class} min={values.min():.17g} "
                     f"max={values.max():.17g}\n")
