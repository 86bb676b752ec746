"""Dataclass configs for every subsystem plus the nested run config.

A run config file is YAML with blocks ``data``, ``backbone``, ``loss``,
``detector``, ``train``, ``eval``, ``io``. Every field is validated before
any work starts; a bad value fails fast with its key path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError


@dataclass
class BackboneConfig:
    """Dual-complexity encoder dimensions.

    The default is the toy configuration: structurally a 12-block ViT with a
    lightweight CNN fusion block ahead of each transformer block, sized to
    train on a laptop CPU.
    """

    image_size: int = 256
    patch_size: int = 16
    embed_dim: int = 192
    blocks: int = 12
    heads: int = 3
    cnn_channels: int = 32
    mlp_ratio: float = 4.0

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    def validate(self, prefix: str = "backbone") -> None:
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError(f"{prefix}.image_size/patch_size: must be positive")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"{prefix}.image_size: {self.image_size} not divisible by "
                f"patch_size {self.patch_size}"
            )
        if self.embed_dim <= 0 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"{prefix}.embed_dim: {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.blocks < 1:
            raise ConfigError(f"{prefix}.blocks: must be >= 1")
        if self.cnn_channels < 1:
            raise ConfigError(f"{prefix}.cnn_channels: must be >= 1")
        if self.mlp_ratio <= 0:
            raise ConfigError(f"{prefix}.mlp_ratio: must be > 0")


@dataclass
class LossConfig:
    """Mask-loss recipe: focal/dice/MSE weights plus focal parameters."""

    w_focal: float = 1.0
    w_dice: float = 1.0
    w_mse: float = 0.0
    gamma: float = 2.0
    alpha: float = 0.25
    eps: float = 1.0

    @classmethod
    def preset(cls, name: str) -> "LossConfig":
        """``paper`` is the rebalanced 1:1 focal+dice recipe; ``efficientsam``
        is the inherited 20:1:1 focal:dice:MSE recipe."""
        if name == "paper":
            return cls(w_focal=1.0, w_dice=1.0, w_mse=0.0)
        if name == "efficientsam":
            return cls(w_focal=20.0, w_dice=1.0, w_mse=1.0)
        raise ConfigError(f"loss.preset: unknown preset {name!r}")

    def validate(self, prefix: str = "loss") -> None:
        if min(self.w_focal, self.w_dice, self.w_mse) < 0:
            raise ConfigError(f"{prefix}: weights must be >= 0")
        if self.w_focal == self.w_dice == self.w_mse == 0:
            raise ConfigError(f"{prefix}: at least one weight must be > 0")
        if self.gamma < 0:
            raise ConfigError(f"{prefix}.gamma: must be >= 0")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"{prefix}.alpha: must be in (0, 1)")
        if self.eps <= 0:
            raise ConfigError(f"{prefix}.eps: must be > 0")


@dataclass
class FreezeConfig:
    """Which parameter groups are excluded from optimization.

    Prompt encoder and IoU head stay frozen in both phases; the transformer
    branch is trainable unless the freeze-original-branch ablation is on.
    """

    prompt_encoder: bool = True
    iou_head: bool = True
    transformer_branch: bool = False


@dataclass
class TrainConfig:
    phase: str = "finetune"
    epochs: int = 15
    batch_size: int = 12
    lr0: float = 1e-4
    weight_decay: float = 0.01
    optimizer: str = "adam"
    momentum: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    noise_frac: float = 0.1
    flip_prob: float = 0.5
    min_mask_area: Optional[int] = 0
    grad_clip: float = 1.0
    seed: int = 0
    freeze: FreezeConfig = field(default_factory=FreezeConfig)

    @classmethod
    def pretrain_defaults(cls) -> "TrainConfig":
        # min_mask_area=None resolves to 0.1% of the image area at use.
        return cls(
            phase="pretrain",
            epochs=40,
            batch_size=12,
            lr0=1e-4,
            weight_decay=0.01,
            noise_frac=0.0,
            flip_prob=0.0,
            min_mask_area=None,
        )

    @classmethod
    def finetune_defaults(cls) -> "TrainConfig":
        return cls(
            phase="finetune",
            epochs=15,
            batch_size=12,
            lr0=1e-4,
            weight_decay=0.01,
            noise_frac=0.1,
            flip_prob=0.5,
            min_mask_area=0,
        )

    def resolved_min_mask_area(self, image_size: int) -> int:
        if self.min_mask_area is None:
            return max(1, int(0.001 * image_size * image_size))
        return self.min_mask_area

    def validate(self, prefix: str = "train") -> None:
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"{prefix}.phase: must be pretrain or finetune")
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size: must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError(f"{prefix}.lr0: must be > 0")
        if self.weight_decay < 0:
            raise ConfigError(f"{prefix}.weight_decay: must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"{prefix}.optimizer: must be adam or sgd")
        if not 0 <= self.noise_frac < 0.5:
            raise ConfigError(f"{prefix}.noise_frac: must be in [0, 0.5)")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError(f"{prefix}.flip_prob: must be in [0, 1]")
        if self.min_mask_area is not None and self.min_mask_area < 0:
            raise ConfigError(f"{prefix}.min_mask_area: must be >= 0")
        self.loss.validate(prefix=f"{prefix}.loss")


@dataclass
class DetectorConfig:
    """Box provider at inference: the noisy ground-truth oracle, or an external
    two-class detector plugged in through the detection interface."""

    kind: str = "oracle"
    noise_frac: float = 0.0
    score_thresh: float = 0.0
    max_dets: int = 30
    weights_path: Optional[str] = None

    def validate(self, prefix: str = "detector") -> None:
        if self.kind not in ("oracle", "external"):
            raise ConfigError(f"{prefix}.kind: must be oracle or external")
        if not 0 <= self.noise_frac < 0.5:
            raise ConfigError(f"{prefix}.noise_frac: must be in [0, 0.5)")
        if not 0 <= self.score_thresh <= 1:
            raise ConfigError(f"{prefix}.score_thresh: must be in [0, 1]")
        if self.max_dets < 0:
            raise ConfigError(f"{prefix}.max_dets: must be >= 0")


@dataclass
class DetectorTrainConfig:
    """Training recipe an external plane detector should follow.

    Not executed here; recorded so a detector trained elsewhere can plug in
    without interface changes.
    """

    optimizer: str = "sgd"
    lr0: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 10
    schedule: str = "cosine"


@dataclass
class SceneConfig:
    """Synthetic RGB-D scene generator knobs."""

    size: int = 256
    planes_min: int = 2
    planes_max: int = 8
    depth_min: float = 1.0
    depth_max: float = 8.0
    tilt_prob: float = 0.3
    max_tilt_deg: float = 20.0
    min_plane_frac: float = 0.04
    max_place_tries: int = 40

    def validate(self, prefix: str = "data.scene") -> None:
        if self.size < 16:
            raise ConfigError(f"{prefix}.size: must be >= 16")
        if not 2 <= self.planes_min <= self.planes_max <= 8:
            raise ConfigError(f"{prefix}.planes_min/planes_max: need 2 <= min <= max <= 8")
        if not 0 < self.depth_min < self.depth_max:
            raise ConfigError(f"{prefix}.depth_min/depth_max: need 0 < min < max")
        if not 0 <= self.tilt_prob <= 1:
            raise ConfigError(f"{prefix}.tilt_prob: must be in [0, 1]")


@dataclass
class DataConfig:
    manifest: Optional[str] = None
    d_max: float = 10.0
    scene: SceneConfig = field(default_factory=SceneConfig)

    def validate(self, prefix: str = "data") -> None:
        if self.d_max <= 0:
            raise ConfigError(f"{prefix}.d_max: must be > 0")
        self.scene.validate(prefix=f"{prefix}.scene")


@dataclass
class EvalConfig:
    noise_levels: tuple = (0.0, 0.1, 0.2, 0.3)

    def validate(self, prefix: str = "eval") -> None:
        for n in self.noise_levels:
            if not 0 <= n < 0.5:
                raise ConfigError(f"{prefix}.noise_levels: each must be in [0, 0.5)")


@dataclass
class IoConfig:
    out_dir: str = "runs"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    io: IoConfig = field(default_factory=IoConfig)

    def validate(self) -> None:
        self.data.validate()
        self.backbone.validate()
        self.loss.validate()
        self.detector.validate()
        # the shared loss block is the default for train.loss when the train
        # block does not override it (handled at parse time)
        self.train.validate()
        self.eval.validate()


def _build_dataclass(cls, raw: dict, prefix: str):
    """Construct ``cls`` from a dict, rejecting unknown keys with their path."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix}: expected a mapping, got {type(raw).__name__}")
    if cls is LossConfig and "preset" in raw:
        base = LossConfig.preset(raw["preset"])
        rest = {k: v for k, v in raw.items() if k != "preset"}
        merged = {**dataclasses.asdict(base), **rest}
        return _build_dataclass(cls, merged, prefix)
    known = {f.name: f for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{prefix}.{key}: unknown key")
        ftype = known[key].type
        if dataclasses.is_dataclass(_DATACLASS_FIELDS.get((cls, key))):
            value = _build_dataclass(
                _DATACLASS_FIELDS[(cls, key)], value, f"{prefix}.{key}"
            )
        elif key == "noise_levels" and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


# nested dataclass fields that need recursive construction
_DATACLASS_FIELDS = {
    (TrainConfig, "loss"): LossConfig,
    (TrainConfig, "freeze"): FreezeConfig,
    (DataConfig, "scene"): SceneConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "backbone"): BackboneConfig,
    (RunConfig, "loss"): LossConfig,
    (RunConfig, "detector"): DetectorConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "eval"): EvalConfig,
    (RunConfig, "io"): IoConfig,
}


def run_config_from_dict(raw: dict) -> RunConfig:
    cfg = _build_dataclass(RunConfig, raw, prefix="config")
    # the top-level loss block is the train-loss default unless train.loss
    # was given explicitly
    train_block = raw.get("train") or {}
    if "loss" in raw and "loss" not in train_block:
        cfg.train.loss = cfg.loss
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return run_config_from_dict(raw)
