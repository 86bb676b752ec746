"""Dataset files: 8-bit RGB, 16-bit millimeter depth, 16-bit id labels,
and the line-delimited JSON manifest binding them."""

from __future__ import annotations

import contextlib
import json
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
from PIL import Image

from ..errors import DataError
from .types import PlaneAnnotation, RgbdSample


def write_rgb(path: Path, rgb: np.ndarray) -> None:
    arr = np.round(np.clip(rgb, 0, 1) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_depth(path: Path, depth_m: np.ndarray) -> None:
    mm = np.round(np.clip(depth_m, 0, 65.535) * 1000.0).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_depth(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.float32)
    return arr / 1000.0


def write_labels(path: Path, labels: np.ndarray) -> None:
    if labels.max() > np.iinfo(np.uint16).max:
        raise DataError("label ids exceed 16-bit range")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_labels(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint16)


def _open_or_raise(path: Path, reader, what: str) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing {what} file: {path}")
    try:
        return reader(path)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode {what} file {path}: {exc}") from exc


def load_rgbd_sample(entry: dict, base_dir: Optional[Path] = None) -> RgbdSample:
    """Build a validated sample from one manifest record."""
    base = Path(base_dir) if base_dir is not None else Path(".")
    rgb = _open_or_raise(base / entry["rgb_path"], read_rgb, "rgb")
    depth = _open_or_raise(base / entry["depth_path"], read_depth, "depth")
    annotation = None
    if entry.get("label_path"):
        labels = _open_or_raise(base / entry["label_path"], read_labels, "label")
        if labels.shape != depth.shape:
            raise DataError(
                f"sample {entry.get('id')}: label shape {labels.shape} does not "
                f"match depth {depth.shape}"
            )
        annotation = PlaneAnnotation.from_label_raster(labels)
    sample = RgbdSample(
        rgb=rgb, depth=depth, id=str(entry.get("id", "")), annotation=annotation
    )
    sample.validate()
    return sample


def read_manifest(path: Path) -> List[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
        if "id" not in rec or "rgb_path" not in rec or "depth_path" not in rec:
            raise DataError(f"{path}:{lineno}: manifest record missing required keys")
        entries.append(rec)
    return entries


@contextlib.contextmanager
def manifest_writer(path: Path) -> Iterator:
    """Write a manifest with a ``.partial`` marker that survives failures.

    The marker is created before the first byte and removed only after the
    manifest is fully written.
    """
    path = Path(path)
    marker = path.with_suffix(path.suffix + ".partial")
    marker.touch()
    with open(path, "w", encoding="utf-8") as fh:

        def emit(record: dict) -> None:
            fh.write(json.dumps(record) + "\n")

        yield emit
    marker.unlink()


def save_sample(sample: RgbdSample, out_dir: Path) -> dict:
    """Write one sample's rasters; returns its manifest record.

    Only plane instances are persisted in the label raster (non-plane
    clutter folds into background, id 0).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb_name = f"{sample.id}_rgb.png"
    depth_name = f"{sample.id}_depth.png"
    write_rgb(out_dir / rgb_name, sample.rgb)
    write_depth(out_dir / depth_name, sample.depth)
    record = {"id": sample.id, "rgb_path": rgb_name, "depth_path": depth_name}
    if sample.annotation is not None and sample.annotation.plane_masks():
        label_name = f"{sample.id}_labels.png"
        write_labels(out_dir / label_name, sample.annotation.to_label_raster())
        record["label_path"] = label_name
    return record


def load_dataset(manifest_path: Path) -> List[RgbdSample]:
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    return [load_rgbd_sample(e, base_dir=manifest_path.parent) for e in entries]
