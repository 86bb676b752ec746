"""Box prompt encoding. Frozen during all training phases."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from ..data.types import BoxPrompt
from ..errors import DataError


class RandomFourierPositions(nn.Module):
    """Sinusoidal encoding of normalized 2-D coordinates.

    The Gaussian frequency matrix is a buffer, not a parameter: it never
    trains and it is shared between the corner tokens and the dense image
    positional map so prompt coordinates and image positions live in the
    same embedding space.
    """

    def __init__(self, embed_dim: int, scale: float = 1.0):
        super().__init__()
        self.register_buffer("freqs", scale * torch.randn(2, embed_dim // 2))

    def encode(self, coords01: torch.Tensor) -> torch.Tensor:
        proj = 2.0 * torch.pi * coords01 @ self.freqs
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)

    def grid(self, grid_size: int) -> torch.Tensor:
        """Dense positional map at pixel centers, shape (D, G, G)."""
        coords = (torch.arange(grid_size, dtype=self.freqs.dtype) + 0.5) / grid_size
        ys, xs = torch.meshgrid(coords, coords, indexing="ij")
        pe = self.encode(torch.stack([xs, ys], dim=-1))
        return pe.permute(2, 0, 1)


class BoxPromptEncoder(nn.Module):
    """Sparse corner tokens plus a dense rendering of the box.

    Sparse: each corner's positional encoding plus a learned per-corner type
    term. Dense: the box's fractional coverage of every embedding cell,
    scaled by a fixed embedding direction; the decoder adds it to the image
    embedding so the prompted region is directly marked in feature space.
    All parameters here stay frozen through both training phases.
    """

    def __init__(self, embed_dim: int, image_size: int):
        super().__init__()
        self.image_size = image_size
        self.positions = RandomFourierPositions(embed_dim)
        self.corner_type = nn.Embedding(2, embed_dim)
        self.box_embed = nn.Parameter(torch.randn(embed_dim))

    def _check(self, boxes: torch.Tensor) -> None:
        if boxes.ndim != 2 or boxes.shape[1] != 4:
            raise DataError(f"expected boxes of shape (B, 4), got {tuple(boxes.shape)}")
        if not torch.all((boxes[:, 0] < boxes[:, 2]) & (boxes[:, 1] < boxes[:, 3])):
            raise DataError("degenerate box prompt: min must be strictly below max")

    def forward(self, boxes: torch.Tensor) -> torch.Tensor:
        """boxes: (B, 4) as (x_min, y_min, x_max, y_max) -> tokens (B, 2, D)."""
        self._check(boxes)
        corners = boxes.reshape(-1, 2, 2) / self.image_size
        tokens = self.positions.encode(corners.to(self.positions.freqs.dtype))
        return tokens + self.corner_type.weight.unsqueeze(0)

    def dense_box(self, boxes: torch.Tensor, grid_size: int) -> torch.Tensor:
        """Per-cell box coverage times the box direction, shape (B, D, G, G)."""
        self._check(boxes)
        cell = self.image_size / grid_size
        edges = torch.arange(grid_size + 1, dtype=boxes.dtype) * cell
        lo, hi = edges[:-1], edges[1:]

        def coverage(cmin, cmax):
            # (B, G) fractional overlap of [cmin, cmax] with each cell
            inter = torch.minimum(cmax[:, None], hi) - torch.maximum(cmin[:, None], lo)
            return inter.clamp(min=0.0) / cell

        cov_x = coverage(boxes[:, 0], boxes[:, 2])
        cov_y = coverage(boxes[:, 1], boxes[:, 3])
        cov = cov_y[:, :, None] * cov_x[:, None, :]
        return cov.unsqueeze(1) * self.box_embed[None, :, None, None]

    def dense_positional(self, grid_size: int) -> torch.Tensor:
        return self.positions.grid(grid_size)


def boxes_to_tensor(boxes: Sequence[BoxPrompt]) -> torch.Tensor:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float32)
    return torch.from_numpy(arr.reshape(-1, 4))
