"""Partition-comparison metrics: variation of information, Rand index, and
segmentation covering.

Partitions are integer label rasters where 0 is the non-plane background and
k >= 1 identifies instance k. VOI and RI treat the background as one ordinary
region, so disagreement about planarity is penalized; SC averages best-IoU
over ground-truth plane regions only, weighted by area. VOI is reported in
nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DataError


@dataclass
class PartitionMetrics:
    voi: float
    ri: float
    sc: float


def contingency(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Joint label-count table: entry (i, j) counts pixels with the i-th
    predicted label and the j-th ground-truth label (labels in sorted
    order of their ids)."""
    if pred.shape != gt.shape:
        raise DataError(f"partition shapes differ: {pred.shape} vs {gt.shape}")
    pred_ids, pred_inv = np.unique(pred, return_inverse=True)
    gt_ids, gt_inv = np.unique(gt, return_inverse=True)
    table = np.zeros((len(pred_ids), len(gt_ids)), dtype=np.int64)
    np.add.at(table, (pred_inv.ravel(), gt_inv.ravel()), 1)
    return table


def _pairs(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float64) * (x - 1) / 2.0


def rand_index(pred: np.ndarray, gt: np.ndarray) -> float:
    """Fraction of unordered pixel pairs on which both partitions agree
    (same-label in both, or different-label in both)."""
    n = pred.size
    if n < 2:
        raise DataError("rand index needs at least 2 pixels")
    table = contingency(pred, gt)
    total_pairs = n * (n - 1) / 2.0
    together_both = _pairs(table).sum()
    together_pred = _pairs(table.sum(axis=1)).sum()
    together_gt = _pairs(table.sum(axis=0)).sum()
    agree = total_pairs + 2.0 * together_both - together_pred - together_gt
    return float(agree / total_pairs)


def variation_of_information(pred: np.ndarray, gt: np.ndarray) -> float:
    """H(pred) + H(gt) - 2 I(pred; gt) over the pixel-label distributions."""
    if pred.size < 2:
        raise DataError("variation of information needs at least 2 pixels")
    table = contingency(pred, gt).astype(np.float64)
    n = table.sum()
    p_joint = table / n
    p_pred = p_joint.sum(axis=1)
    p_gt = p_joint.sum(axis=0)

    def entropy(p: np.ndarray) -> float:
        # canonical (sorted) summation order so voi(a, b) == voi(b, a) exactly
        p = np.sort(p[p > 0])
        return float(-(p * np.log(p)).sum())

    h_pred = entropy(p_pred)
    h_gt = entropy(p_gt)
    h_joint = entropy(p_joint.ravel())
    # H(A) + H(B) - 2 I(A;B) simplifies to 2 H(A,B) - H(A) - H(B)
    return max(0.0, 2.0 * h_joint - (h_pred + h_gt))


def segmentation_covering(pred: np.ndarray, gt: np.ndarray) -> float:
    """Area-weighted mean over GT plane regions of the best IoU with any
    predicted instance region."""
    if pred.shape != gt.shape:
        raise DataError(f"partition shapes differ: {pred.shape} vs {gt.shape}")
    gt_ids = [k for k in np.unique(gt) if k != 0]
    if not gt_ids:
        raise DataError("segmentation covering undefined: no plane pixels in GT")
    pred_ids = [k for k in np.unique(pred) if k != 0]

    table = contingency(pred, gt)
    pred_all = np.unique(pred)
    gt_all = np.unique(gt)
    pred_areas = table.sum(axis=1)
    gt_areas = table.sum(axis=0)
    pred_index = {k: i for i, k in enumerate(pred_all)}
    gt_index = {k: j for j, k in enumerate(gt_all)}

    n_plane = sum(int(gt_areas[gt_index[k]]) for k in gt_ids)
    covered = 0.0
    for k in gt_ids:
        j = gt_index[k]
        area_r = float(gt_areas[j])
        best = 0.0
        for p in pred_ids:
            i = pred_index[p]
            inter = float(table[i, j])
            if inter == 0:
                continue
            union = float(pred_areas[i]) + area_r - inter
            best = max(best, inter / union)
        covered += area_r * best
    return covered / n_plane


def compute_metrics(pred: np.ndarray, gt: np.ndarray) -> PartitionMetrics:
    return PartitionMetrics(
        voi=variation_of_information(pred, gt),
        ri=rand_index(pred, gt),
        sc=segmentation_covering(pred, gt),
    )


def evaluate_dataset(
    pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
    ids: Sequence[str] | None = None,
) -> Tuple[PartitionMetrics, List[PartitionMetrics]]:
    """Unweighted mean of per-image metrics plus the per-image values."""
    if not pairs:
        raise DataError("evaluate_dataset needs at least one (pred, gt) pair")
    per_image = []
    for idx, (pred, gt) in enumerate(pairs):
        try:
            per_image.append(compute_metrics(pred, gt))
        except DataError as exc:
            tag = ids[idx] if ids is not None else str(idx)
            raise DataError(f"image {tag}: {exc}") from exc
    agg = PartitionMetrics(
        voi=float(np.mean([m.voi for m in per_image])),
        ri=float(np.mean([m.ri for m in per_image])),
        sc=float(np.mean([m.sc for m in per_image])),
    )
    return agg, per_image
