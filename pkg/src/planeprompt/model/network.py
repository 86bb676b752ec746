"""Full promptable segmenter: dual backbone + frozen box prompt encoder +
three-mask decoder."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..config import BackboneConfig
from ..data.types import RgbdSample
from .backbone import DualBackbone
from .decoder import MaskDecoder, MaskTriplet
from .prompt_encoder import BoxPromptEncoder


class BoxPromptedSegmenter(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = DualBackbone(cfg)
        self.prompt_encoder = BoxPromptEncoder(cfg.embed_dim, cfg.image_size)
        self.decoder = MaskDecoder(cfg.embed_dim, cfg.heads)

    def forward(
        self, rgb: torch.Tensor, depth: torch.Tensor, boxes: torch.Tensor
    ) -> MaskTriplet:
        """One box prompt per image: rgb (B,3,S,S), depth (B,S,S), boxes (B,4)."""
        embedding = self.backbone(rgb, depth)
        return self.decode(embedding, boxes, rgb.shape[-2:])

    def decode(
        self, embedding: torch.Tensor, boxes: torch.Tensor, out_size: tuple
    ) -> MaskTriplet:
        g = self.backbone.grid_size
        tokens = self.prompt_encoder(boxes)
        dense = self.prompt_encoder.dense_box(boxes, g)
        image_pe = self.prompt_encoder.dense_positional(g)
        return self.decoder(
            embedding, image_pe.unsqueeze(0), tokens, out_size, dense_prompt=dense
        )


def build_model(cfg: BackboneConfig, seed: int = 0) -> BoxPromptedSegmenter:
    """Construct with a fixed seed so runs are reproducible end to end."""
    torch.manual_seed(seed)
    return BoxPromptedSegmenter(cfg)


def sample_to_tensors(sample: RgbdSample, d_max: float) -> tuple:
    """(3,H,W) rgb tensor and (H,W) normalized depth tensor."""
    rgb = torch.from_numpy(np.ascontiguousarray(sample.rgb.transpose(2, 0, 1)))
    depth = torch.from_numpy(
        np.clip(sample.depth / d_max, 0.0, 1.0).astype(np.float32)
    )
    return rgb.float(), depth
