"""Plane bounding-box providers for inference.

The desk-scale build ships a noisy ground-truth oracle; a real two-class
(plane / non-plane) detector trained elsewhere plugs in through the same
``detect(sample)`` interface or through box files consumed by the infer
command. ``DetectorTrainConfig`` in the config module records the recipe
such an external detector should be trained with.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Protocol

import numpy as np

from .config import DetectorConfig
from .data.augment import jitter_box, tight_box
from .data.types import BoxPrompt, PlaneAnnotation, RgbdSample
from .errors import ConfigError, DataError

PLANE = "plane"
NON_PLANE = "non_plane"


@dataclass
class Detection:
    box: BoxPrompt
    score: float
    label: str = PLANE

    def validate(self) -> None:
        if not 0 <= self.score <= 1:
            raise DataError(f"detection score out of [0,1]: {self.score}")
        self.box.validate()


def oracle_boxes(
    annotation: PlaneAnnotation,
    noise_frac: float,
    rng: np.random.Generator,
    width: int,
    height: int,
) -> List[Detection]:
    """One detection per ground-truth plane mask: the tight box, jittered by
    up to ``noise_frac`` of each side length, score 1."""
    dets = []
    for mask in annotation.plane_masks():
        box = jitter_box(tight_box(mask), noise_frac, rng, width, height)
        dets.append(Detection(box=box, score=1.0, label=PLANE))
    return dets


class PlaneDetector(Protocol):
    def detect(self, sample: RgbdSample) -> List[Detection]: ...


class OracleDetector:
    """Detector-interface adapter over the ground-truth annotation."""

    def __init__(self, noise_frac: float, rng: np.random.Generator):
        self.noise_frac = noise_frac
        self.rng = rng

    def detect(self, sample: RgbdSample) -> List[Detection]:
        if sample.annotation is None:
            raise DataError(f"sample {sample.id}: oracle detector needs an annotation")
        return oracle_boxes(
            sample.annotation, self.noise_frac, self.rng, sample.width, sample.height
        )


def detect_planes(sample: RgbdSample, model: PlaneDetector) -> List[Detection]:
    """Run a detector and return detections sorted by descending score."""
    if model is None:
        raise ConfigError("no detector implementation configured")
    dets = model.detect(sample)
    for d in dets:
        d.validate()
    return sorted(dets, key=lambda d: -d.score)


def filter_detections(
    dets: List[Detection], score_thresh: float, max_dets: int
) -> List[Detection]:
    """Keep plane-labeled detections at or above the threshold, truncated to
    ``max_dets``; surviving order is preserved."""
    if not 0 <= score_thresh <= 1:
        raise ConfigError(f"score_thresh must be in [0,1], got {score_thresh}")
    kept = [d for d in dets if d.label == PLANE and d.score >= score_thresh]
    return kept[:max_dets]


def build_detector(cfg: DetectorConfig, rng: np.random.Generator) -> PlaneDetector:
    if cfg.kind == "oracle":
        return OracleDetector(noise_frac=cfg.noise_frac, rng=rng)
    raise ConfigError(
        "detector.kind 'external' has no built-in implementation; plug a "
        "PlaneDetector in code or pass --boxes to infer"
    )
