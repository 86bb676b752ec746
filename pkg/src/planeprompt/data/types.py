"""Core observation types: RGB-D samples, instance annotations, box prompts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import DataError


@dataclass
class BoxPrompt:
    """Axis-aligned box in pixel coordinates, half-open [min, max).

    All coordinates in the system are dyadic rationals (multiples of
    1/65536): tight boxes are integral and jitter is quantized, which keeps
    horizontal flipping an exact involution under float arithmetic.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def validate(self, width: Optional[int] = None, height: Optional[int] = None) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DataError(f"degenerate box prompt: {self.as_tuple()}")
        if width is not None and (self.x_max <= 0 or self.x_min >= width):
            raise DataError(f"box outside image (width {width}): {self.as_tuple()}")
        if height is not None and (self.y_max <= 0 or self.y_min >= height):
            raise DataError(f"box outside image (height {height}): {self.as_tuple()}")

    def as_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


@dataclass
class PlaneAnnotation:
    """Pairwise-disjoint binary instance masks plus a per-mask plane flag.

    Pixels covered by no mask form the implicit background region.
    """

    masks: List[np.ndarray]
    is_plane: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.is_plane:
            self.is_plane = [True] * len(self.masks)
        if len(self.is_plane) != len(self.masks):
            raise DataError("is_plane length does not match mask count")

    def validate(self) -> None:
        if not self.masks:
            return
        shape = self.masks[0].shape
        cover = np.zeros(shape, dtype=np.int32)
        for m in self.masks:
            if m.shape != shape:
                raise DataError("annotation masks disagree in shape")
            if m.dtype != bool:
                raise DataError("annotation masks must be boolean")
            if int(m.sum()) < 1:
                raise DataError("annotation mask with zero area")
            cover += m
        if int(cover.max()) > 1:
            raise DataError("annotation masks overlap")

    def plane_masks(self) -> List[np.ndarray]:
        return [m for m, p in zip(self.masks, self.is_plane) if p]

    def to_label_raster(self) -> np.ndarray:
        """Plane instances as ids 1..K; non-plane pixels (including non-plane
        instances) map to 0."""
        planes = self.plane_masks()
        if not planes:
            raise DataError("annotation has no plane masks")
        labels = np.zeros(planes[0].shape, dtype=np.uint16)
        for k, m in enumerate(planes, start=1):
            labels[m] = k
        return labels

    @classmethod
    def from_label_raster(cls, labels: np.ndarray) -> "PlaneAnnotation":
        ids = np.unique(labels)
        masks = [labels == k for k in ids if k != 0]
        if not masks:
            raise DataError("label raster contains no instances")
        return cls(masks=masks, is_plane=[True] * len(masks))


@dataclass
class PseudoLabelSet:
    """Automatically produced segmentation masks; imperfect, may overlap."""

    masks: List[np.ndarray]
    source: str = "unknown"

    def validate(self) -> None:
        for m in self.masks:
            if m.dtype != bool:
                raise DataError("pseudo-label masks must be boolean")
            if int(m.sum()) < 1:
                raise DataError("pseudo-label mask with zero area")

    @classmethod
    def from_label_raster(cls, labels: np.ndarray, source: str = "raster") -> "PseudoLabelSet":
        ids = [k for k in np.unique(labels) if k != 0]
        return cls(masks=[labels == k for k in ids], source=source)


@dataclass
class RgbdSample:
    """One 4-band observation: RGB in [0,1], depth in meters (0 = missing)."""

    rgb: np.ndarray
    depth: np.ndarray
    id: str = ""
    annotation: Optional[PlaneAnnotation] = None

    def validate(self) -> None:
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DataError(f"sample {self.id}: rgb must be HxWx3")
        if self.depth.shape != self.rgb.shape[:2]:
            raise DataError(
                f"sample {self.id}: depth shape {self.depth.shape} does not match "
                f"rgb {self.rgb.shape[:2]}"
            )
        if not np.isfinite(self.depth).all():
            raise DataError(f"sample {self.id}: depth has non-finite values")
        if float(self.depth.min()) < 0:
            raise DataError(f"sample {self.id}: negative depth")
        if self.annotation is not None:
            self.annotation.validate()
            for m in self.annotation.masks:
                if m.shape != self.depth.shape:
                    raise DataError(f"sample {self.id}: annotation shape mismatch")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]
