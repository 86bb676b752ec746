from .augment import (
    corrupt_masks,
    filter_small_masks,
    horizontal_flip,
    jitter_box,
    normalize_depth,
    sample_pretrain_target,
    tight_box,
)
from .io import (
    load_dataset,
    load_rgbd_sample,
    manifest_writer,
    read_manifest,
    save_sample,
)
from .synthetic import generate_synthetic_scene
from .types import BoxPrompt, PlaneAnnotation, PseudoLabelSet, RgbdSample

__all__ = [
    "BoxPrompt",
    "PlaneAnnotation",
    "PseudoLabelSet",
    "RgbdSample",
    "corrupt_masks",
    "filter_small_masks",
    "generate_synthetic_scene",
    "horizontal_flip",
    "jitter_box",
    "load_dataset",
    "load_rgbd_sample",
    "manifest_writer",
    "normalize_depth",
    "read_manifest",
    "sample_pretrain_target",
    "save_sample",
    "tight_box",
]
