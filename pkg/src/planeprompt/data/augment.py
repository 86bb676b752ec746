"""Raster and box transforms used by both training phases.

Every operation is pure given its rng, so parallel workers can each own a
seeded stream without shared state.
"""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, DataError
from .types import BoxPrompt, PseudoLabelSet, RgbdSample

# Box coordinates live on a 1/65536 grid. Integer image widths minus dyadic
# coordinates are exact in float64, which makes horizontal flipping an exact
# involution; raw floats would not survive the double subtraction.
COORD_QUANT = 65536


def _quantize(value: float) -> float:
    return round(value * COORD_QUANT) / COORD_QUANT


def normalize_depth(depth: np.ndarray, d_max: float) -> np.ndarray:
    """Linear clamp of metric depth to [0,1]; missing depth (0) stays 0."""
    if d_max <= 0:
        raise ConfigError(f"d_max must be > 0, got {d_max}")
    return np.clip(depth / d_max, 0.0, 1.0).astype(np.float32)


def tight_box(mask: np.ndarray) -> BoxPrompt:
    """Smallest half-open box containing every foreground pixel."""
    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    if not rows.any():
        raise DataError("cannot take the tight box of an empty mask")
    r0, r1 = np.nonzero(rows)[0][[0, -1]]
    c0, c1 = np.nonzero(cols)[0][[0, -1]]
    return BoxPrompt(float(c0), float(r0), float(c1 + 1), float(r1 + 1))


def jitter_box(
    box: BoxPrompt,
    max_frac: float,
    rng: np.random.Generator,
    width: int,
    height: int,
) -> BoxPrompt:
    """Displace each coordinate by an independent uniform draw bounded by
    ``max_frac`` times the matching side length.

    The jittered box is clipped to the image; if it collapses, the draw is
    repeated up to 8 times before falling back to the original box.
    """
    if not 0 <= max_frac < 0.5:
        raise ConfigError(f"max_frac must be in [0, 0.5), got {max_frac}")
    if max_frac == 0:
        return BoxPrompt(*box.as_tuple())
    bw, bh = box.width, box.height
    # largest dyadic magnitude not exceeding the exact bound
    lim_x = math.floor(max_frac * bw * COORD_QUANT) / COORD_QUANT
    lim_y = math.floor(max_frac * bh * COORD_QUANT) / COORD_QUANT
    def shift(coord: float, delta: float, lim: float, upper: float) -> float:
        d = min(max(_quantize(float(delta)), -lim), lim)
        return float(min(max(coord + d, 0.0), upper))

    for _ in range(8):
        dx0, dx1 = rng.uniform(-max_frac * bw, max_frac * bw, size=2)
        dy0, dy1 = rng.uniform(-max_frac * bh, max_frac * bh, size=2)
        x0 = shift(box.x_min, dx0, lim_x, float(width))
        x1 = shift(box.x_max, dx1, lim_x, float(width))
        y0 = shift(box.y_min, dy0, lim_y, float(height))
        y1 = shift(box.y_max, dy1, lim_y, float(height))
        if x0 < x1 and y0 < y1:
            return BoxPrompt(x0, y0, x1, y1)
    return BoxPrompt(*box.as_tuple())


def horizontal_flip(
    sample: RgbdSample, boxes: List[BoxPrompt]
) -> Tuple[RgbdSample, List[BoxPrompt]]:
    """Mirror rasters, masks, and boxes about the vertical axis."""
    w = float(sample.width)
    flipped = RgbdSample(
        rgb=np.ascontiguousarray(sample.rgb[:, ::-1]),
        depth=np.ascontiguousarray(sample.depth[:, ::-1]),
        id=sample.id,
        annotation=None,
    )
    if sample.annotation is not None:
        ann = sample.annotation
        flipped.annotation = type(ann)(
            masks=[np.ascontiguousarray(m[:, ::-1]) for m in ann.masks],
            is_plane=list(ann.is_plane),
        )
    out_boxes = [
        BoxPrompt(w - b.x_max, b.y_min, w - b.x_min, b.y_max) for b in boxes
    ]
    return flipped, out_boxes


def filter_small_masks(labels: PseudoLabelSet, min_area: int) -> PseudoLabelSet:
    """Drop masks below ``min_area`` pixels, preserving order."""
    if min_area < 0:
        raise ConfigError(f"min_area must be >= 0, got {min_area}")
    kept = [m for m in labels.masks if int(m.sum()) >= min_area]
    return PseudoLabelSet(masks=kept, source=labels.source)


def sample_pretrain_target(
    labels: PseudoLabelSet, rng: np.random.Generator
) -> Tuple[np.ndarray, BoxPrompt]:
    """Uniformly pick one pseudo mask with its tight bounding box."""
    if not labels.masks:
        raise DataError("cannot sample a target from an empty pseudo-label set")
    idx = int(rng.integers(len(labels.masks)))
    mask = labels.masks[idx]
    return mask, tight_box(mask)


def corrupt_masks(
    masks: List[np.ndarray], frac: float, rng: np.random.Generator
) -> List[np.ndarray]:
    """Dilate or erode each mask (coin flip) by a square element whose radius
    targets a relative area change of about ``frac``.

    For a compact region of area A the boundary sweep changes the area by
    roughly 4*r*sqrt(A), so r = frac*sqrt(A)/4. Erosions that would empty a
    mask leave it unchanged.
    """
    out = []
    for mask in masks:
        area = float(mask.sum())
        r = max(1, int(round(frac * math.sqrt(area) / 4.0)))
        struct = np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        if rng.random() < 0.5:
            corrupted = ndimage.binary_dilation(mask, structure=struct)
        else:
            corrupted = ndimage.binary_erosion(mask, structure=struct)
            if not corrupted.any():
                corrupted = mask.copy()
        out.append(corrupted.astype(bool))
    return out
