"""Deterministic synthetic RGB-D scenes with exact plane annotations.

Scenes contain flat-colored rectangular planes (axis-aligned or mildly
tilted) carrying linear depth ramps, one textured non-plane clutter blob,
and a gradient background. Pixel values are quantized to the on-disk
precision (8-bit color, millimeter depth) so a saved scene reloads
bit-identically.
"""

from __future__ import annotations

import colorsys
import math
from typing import List, Tuple

import numpy as np

from ..config import SceneConfig
from ..errors import DataError
from .types import PlaneAnnotation, RgbdSample

_LAYOUT_ATTEMPTS = 12


def _rect_mask(
    size: int, cx: float, cy: float, w: float, h: float, angle_deg: float
) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    t = math.radians(angle_deg)
    u = (xs - cx) * math.cos(t) + (ys - cy) * math.sin(t)
    v = -(xs - cx) * math.sin(t) + (ys - cy) * math.cos(t)
    return (np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)


def _distinct_colors(k: int, rng: np.random.Generator) -> List[np.ndarray]:
    offset = rng.uniform(0, 1)
    colors = []
    for i in range(k):
        hue = (offset + i / max(k, 1)) % 1.0
        sat = rng.uniform(0.55, 0.95)
        val = rng.uniform(0.55, 0.95)
        colors.append(np.array(colorsys.hsv_to_rgb(hue, sat, val), dtype=np.float64))
    return colors


def _depth_ramp(
    size: int, cx: float, cy: float, base: float, rng: np.random.Generator
) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    gx, gy = rng.uniform(-1.5, 1.5, size=2)
    ramp = base + gx * (xs - cx) / size + gy * (ys - cy) / size
    return np.maximum(ramp, 0.05)


def generate_synthetic_scene(
    seed: int, cfg: SceneConfig
) -> Tuple[RgbdSample, PlaneAnnotation]:
    """Render one scene; identical seeds give bit-identical outputs."""
    rng = np.random.default_rng(seed)
    size = cfg.size
    n_planes = int(rng.integers(cfg.planes_min, cfg.planes_max + 1))
    min_area = max(1, int(cfg.min_plane_frac * size * size))

    for _ in range(_LAYOUT_ATTEMPTS):
        occupied = np.zeros((size, size), dtype=bool)
        plane_masks: List[np.ndarray] = []
        plane_params: List[Tuple[float, float]] = []
        ok = True
        max_side = size * min(0.55, 1.25 / math.sqrt(n_planes))
        min_side = max(size * 0.12, math.sqrt(min_area))
        for _plane in range(n_planes):
            placed = False
            for _try in range(cfg.max_place_tries):
                w = rng.uniform(min_side, max_side)
                h = rng.uniform(min_side, max_side)
                cx = rng.uniform(w / 2, size - w / 2)
                cy = rng.uniform(h / 2, size - h / 2)
                angle = 0.0
                if rng.random() < cfg.tilt_prob:
                    angle = rng.uniform(-cfg.max_tilt_deg, cfg.max_tilt_deg)
                cand = _rect_mask(size, cx, cy, w, h, angle)
                visible = cand & ~occupied
                if visible.sum() >= max(min_area, 0.6 * cand.sum()):
                    occupied |= visible
                    plane_masks.append(visible)
                    plane_params.append((cx, cy))
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok:
            break
    else:
        raise DataError(
            f"could not place {n_planes} planes of size>={min_area}px "
            f"in a {size}x{size} scene (seed {seed})"
        )

    # background: vertical color gradient plus mild texture, far wall depth
    c_top, c_bot = rng.uniform(0.1, 0.9, size=(2, 3))
    grad = np.linspace(0, 1, size)[:, None, None]
    rgb = np.tile((1 - grad) * c_top + grad * c_bot, (1, size, 1))
    rgb += rng.uniform(-0.02, 0.02, size=(size, size, 3))
    depth = np.full((size, size), cfg.depth_max, dtype=np.float64)
    depth += 0.2 * np.sin(np.linspace(0, 2 * math.pi, size))[None, :]

    # planes: flat color, linear depth ramp
    colors = _distinct_colors(n_planes, rng)
    for mask, (cx, cy), color in zip(plane_masks, plane_params, colors):
        base = rng.uniform(cfg.depth_min, 0.9 * cfg.depth_max)
        ramp = _depth_ramp(size, cx, cy, base, rng)
        rgb[mask] = color
        depth[mask] = ramp[mask]

    # one textured non-plane clutter blob with bumpy depth
    rx = rng.uniform(size * 0.06, size * 0.16)
    ry = rng.uniform(size * 0.06, size * 0.16)
    ccx = rng.uniform(rx, size - rx)
    ccy = rng.uniform(ry, size - ry)
    ys, xs = np.mgrid[0:size, 0:size]
    blob = ((xs - ccx) / rx) ** 2 + ((ys - ccy) / ry) ** 2 <= 1.0
    clutter = blob & ~occupied
    texture = rng.uniform(0, 1, size=(size, size, 3))
    bumps = rng.uniform(cfg.depth_min, cfg.depth_max) + 0.3 * np.sin(xs * 0.35) * np.cos(
        ys * 0.35
    )
    masks = list(plane_masks)
    flags = [True] * n_planes
    if clutter.sum() >= 1:
        rgb[clutter] = 0.5 * rgb[clutter] + 0.5 * texture[clutter]
        depth[clutter] = np.maximum(bumps[clutter], 0.05)
        masks.append(clutter)
        flags.append(False)

    # quantize to on-disk precision: 8-bit color, millimeter depth
    rgb = np.round(np.clip(rgb, 0, 1) * 255.0) / 255.0
    depth = np.round(np.clip(depth, 0, 65.535) * 1000.0) / 1000.0

    annotation = PlaneAnnotation(masks=masks, is_plane=flags)
    sample = RgbdSample(
        rgb=rgb.astype(np.float32),
        depth=depth.astype(np.float32),
        id=f"synth-{seed:06d}",
        annotation=annotation,
    )
    sample.validate()
    return sample, annotation
