"""Two-phase training: segment-anything pretraining on pseudo-labels, then
plane-instance fine-tuning.

Both phases share the loop: per image one target mask is drawn, its box
becomes the prompt, the decoder's three candidates are scored with the
focal+dice recipe, and only the minimum-loss candidate backpropagates. The
prompt encoder and IoU head never train; the transformer branch trains
unless the freeze-original-branch ablation flag is set.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import BackboneConfig, TrainConfig
from .data.augment import (
    filter_small_masks,
    horizontal_flip,
    jitter_box,
    sample_pretrain_target,
    tight_box,
)
from .data.types import PlaneAnnotation, PseudoLabelSet, RgbdSample
from .errors import CheckpointError, ConfigError, NumericFault
from .losses import min_of_three
from .model.network import BoxPromptedSegmenter, build_model, sample_to_tensors

CHECKPOINT_VERSION = 1

# parameter-name prefixes addressed by the freeze policy
FREEZE_PREFIXES = {
    "prompt_encoder": "prompt_encoder.",
    "iou_head": "decoder.iou_head.",
    "transformer_branch": "backbone.transformer.",
}


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi * step / total_steps)); hits 0 at the end."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be > 0")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def apply_freeze_policy(model: BoxPromptedSegmenter, cfg: TrainConfig) -> set:
    """Mark frozen groups non-trainable; returns trainable parameter names."""
    frozen = []
    if cfg.freeze.prompt_encoder:
        frozen.append(FREEZE_PREFIXES["prompt_encoder"])
    if cfg.freeze.iou_head:
        frozen.append(FREEZE_PREFIXES["iou_head"])
    if cfg.freeze.transformer_branch:
        frozen.append(FREEZE_PREFIXES["transformer_branch"])
    names = [name for name, _ in model.named_parameters()]
    for prefix in frozen:
        if not any(n.startswith(prefix) for n in names):
            raise ConfigError(f"freeze policy addresses unknown parameter group {prefix!r}")
    trainable = set()
    for name, p in model.named_parameters():
        is_frozen = any(name.startswith(prefix) for prefix in frozen)
        p.requires_grad_(not is_frozen)
        if not is_frozen:
            trainable.add(name)
    return trainable


def build_optimizer(model: BoxPromptedSegmenter, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(
            params, lr=cfg.lr0, betas=(0.9, 0.999), weight_decay=cfg.weight_decay
        )
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(
            params, lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay
        )
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


@dataclass
class StepReport:
    loss: Optional[float]
    lr: float
    skipped: int = 0
    chosen_indices: List[int] = field(default_factory=list)
    filtered_masks: int = 0
    jittered: int = 0
    flipped: int = 0


def _prepare_target(
    sample: RgbdSample,
    mask: np.ndarray,
    box,
    flip: bool,
) -> Tuple[RgbdSample, np.ndarray, object]:
    if not flip:
        return sample, mask, box
    flipped_sample, boxes = horizontal_flip(sample, [box])
    return flipped_sample, np.ascontiguousarray(mask[:, ::-1]), boxes[0]


def _run_batch(
    items: Sequence[Tuple[RgbdSample, np.ndarray, object]],
    model: BoxPromptedSegmenter,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    lr: float,
    d_max: float,
) -> Tuple[float, List[int]]:
    tensors = [sample_to_tensors(s, d_max) for s, _, _ in items]
    rgb = torch.stack([t[0] for t in tensors])
    depth = torch.stack([t[1] for t in tensors])
    boxes = torch.tensor(
        [list(b.as_tuple()) for _, _, b in items], dtype=torch.float32
    )
    targets = torch.stack(
        [torch.from_numpy(m.astype(np.float32)) for _, m, _ in items]
    )

    triplet = model(rgb, depth, boxes)
    losses = []
    indices = []
    for i in range(len(items)):
        loss_i, idx = min_of_three(triplet.logits[i], targets[i], cfg.loss)
        losses.append(loss_i)
        indices.append(idx)
    loss = torch.stack(losses).mean()
    if not torch.isfinite(loss):
        raise NumericFault(f"non-finite training loss {loss.item()!r}")

    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(
            [p for p in model.parameters() if p.requires_grad], cfg.grad_clip
        )
    optimizer.step()
    return float(loss.item()), indices


def pretrain_step(
    batch: Sequence[Tuple[RgbdSample, PseudoLabelSet]],
    model: BoxPromptedSegmenter,
    cfg: TrainConfig,
    rng: np.random.Generator,
    optimizer: torch.optim.Optimizer,
    lr: float,
    d_max: float = 10.0,
) -> StepReport:
    """Segment-anything step: a random pseudo mask per image, tight-box
    prompt, min-of-three backprop. Images whose pseudo-labels all fall below
    the area filter are skipped and counted."""
    report = StepReport(loss=None, lr=lr)
    min_area = cfg.resolved_min_mask_area(model.cfg.image_size)
    items = []
    for sample, labels in batch:
        kept = filter_small_masks(labels, min_area)
        report.filtered_masks += len(labels.masks) - len(kept.masks)
        if not kept.masks:
            report.skipped += 1
            continue
        mask, box = sample_pretrain_target(kept, rng)
        if cfg.noise_frac > 0:
            box = jitter_box(box, cfg.noise_frac, rng, sample.width, sample.height)
            report.jittered += 1
        flip = cfg.flip_prob > 0 and rng.random() < cfg.flip_prob
        if flip:
            report.flipped += 1
        items.append(_prepare_target(sample, mask, box, flip))
    if not items:
        return report
    report.loss, report.chosen_indices = _run_batch(items, model, cfg, optimizer, lr, d_max)
    return report


def finetune_step(
    batch: Sequence[Tuple[RgbdSample, PlaneAnnotation]],
    model: BoxPromptedSegmenter,
    cfg: TrainConfig,
    rng: np.random.Generator,
    optimizer: torch.optim.Optimizer,
    lr: float,
    d_max: float = 10.0,
) -> StepReport:
    """Plane-instance step: a random plane mask per image, jittered GT-box
    prompt, optional joint horizontal flip. Small masks are NOT filtered."""
    report = StepReport(loss=None, lr=lr)
    items = []
    for sample, annotation in batch:
        planes = annotation.plane_masks()
        if not planes:
            report.skipped += 1
            continue
        mask = planes[int(rng.integers(len(planes)))]
        box = tight_box(mask)
        if cfg.noise_frac > 0:
            box = jitter_box(box, cfg.noise_frac, rng, sample.width, sample.height)
            report.jittered += 1
        flip = cfg.flip_prob > 0 and rng.random() < cfg.flip_prob
        if flip:
            report.flipped += 1
        items.append(_prepare_target(sample, mask, box, flip))
    if not items:
        return report
    report.loss, report.chosen_indices = _run_batch(items, model, cfg, optimizer, lr, d_max)
    return report


def run_training(
    model: BoxPromptedSegmenter,
    dataset: Sequence[tuple],
    cfg: TrainConfig,
    *,
    d_max: float = 10.0,
    optimizer: Optional[torch.optim.Optimizer] = None,
    start_step: int = 0,
    total_steps: Optional[int] = None,
    log: Optional[Callable[[dict], None]] = None,
    epoch_hook: Optional[Callable[[int, BoxPromptedSegmenter], bool]] = None,
) -> List[dict]:
    """Run one phase to completion; returns per-epoch log rows.

    ``epoch_hook`` runs after each epoch and may return True to stop early
    (used for threshold-triggered termination in experiments). To resume a
    run pass ``start_step`` from the checkpoint and the original
    ``total_steps`` so the cosine schedule continues where it left off.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    cfg.validate()
    apply_freeze_policy(model, cfg)
    if optimizer is None:
        optimizer = build_optimizer(model, cfg)
    step_fn = pretrain_step if cfg.phase == "pretrain" else finetune_step

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    if total_steps is None:
        total_steps = start_step + cfg.epochs * steps_per_epoch

    history = []
    step = start_step
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        skipped = 0
        last_lr = 0.0
        counters = {"filtered_masks": 0, "jittered": 0, "flipped": 0}
        for chunk_start in range(0, len(dataset), cfg.batch_size):
            chunk = order[chunk_start : chunk_start + cfg.batch_size]
            lr = cosine_lr(min(step, total_steps), total_steps, cfg.lr0)
            report = step_fn(
                [dataset[i] for i in chunk], model, cfg, rng, optimizer, lr, d_max
            )
            if report.loss is not None:
                epoch_losses.append(report.loss)
            skipped += report.skipped
            counters["filtered_masks"] += report.filtered_masks
            counters["jittered"] += report.jittered
            counters["flipped"] += report.flipped
            last_lr = lr
            step += 1
        row = {
            "epoch": epoch,
            "mean_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
            "lr": last_lr,
            "skipped": skipped,
            **counters,
        }
        history.append(row)
        if log is not None:
            log(row)
        if epoch_hook is not None and epoch_hook(epoch, model):
            break
    return history


def save_checkpoint(
    model: BoxPromptedSegmenter,
    optimizer: Optional[torch.optim.Optimizer],
    cfg: TrainConfig,
    path: str | Path,
    *,
    step: int = 0,
    epoch: int = 0,
) -> None:
    """Atomic write: per-branch parameter groups, optimizer state, config
    snapshot, step counter, rng state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "backbone_config": dataclasses.asdict(model.cfg),
        "model": {
            "backbone": model.backbone.state_dict(),
            "prompt_encoder": model.prompt_encoder.state_dict(),
            "decoder": model.decoder.state_dict(),
        },
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "train_config": dataclasses.asdict(cfg),
        "step": step,
        "epoch": epoch,
        "torch_rng": torch.get_rng_state(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(
    path: str | Path,
) -> Tuple[BoxPromptedSegmenter, Optional[torch.optim.Optimizer], TrainConfig, dict]:
    """Rebuild model (+ optimizer when present) from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"not a checkpoint file: {path}")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} incompatible with "
            f"{CHECKPOINT_VERSION}"
        )
    bb_cfg = BackboneConfig(**payload["backbone_config"])
    model = build_model(bb_cfg)
    model.backbone.load_state_dict(payload["model"]["backbone"])
    model.prompt_encoder.load_state_dict(payload["model"]["prompt_encoder"])
    model.decoder.load_state_dict(payload["model"]["decoder"])

    raw_train = dict(payload["train_config"])
    from .config import FreezeConfig, LossConfig  # local to avoid cycle at import

    raw_train["loss"] = LossConfig(**raw_train["loss"])
    raw_train["freeze"] = FreezeConfig(**raw_train["freeze"])
    cfg = TrainConfig(**raw_train)

    optimizer = None
    if payload["optimizer"] is not None:
        apply_freeze_policy(model, cfg)
        optimizer = build_optimizer(model, cfg)
        optimizer.load_state_dict(payload["optimizer"])
    meta = {"step": payload["step"], "epoch": payload["epoch"]}
    return model, optimizer, cfg, meta
