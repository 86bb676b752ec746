"""Dual-complexity RGB-D encoder.

A ViT-style transformer branch carries the RGB tokens; a much lighter CNN
branch carries depth features and injects a zero-initialized residual into
the token stream ahead of every transformer block. At initialization the
residuals are exactly zero, so the dual encoder reproduces the RGB-only
forward bit for bit; the CNN branch only starts contributing once trained.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..config import BackboneConfig
from ..errors import ConfigError, NumericFault

# CNN-branch parameters must stay below this fraction of the transformer
# branch: the point of the design is that the depth path is too small to
# overfit while the token path keeps its capacity.
COMPLEXITY_RATIO_CAP = 0.15


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, need_weights: bool = False):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        out = self.proj(out)
        if need_weights:
            return out, attn
        return out


class EncoderBlock(nn.Module):
    """Pre-norm multi-head self-attention + MLP with residuals."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class TransformerBranch(nn.Module):
    """Patch projection, learned positions, and the encoder block stack."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        g = cfg.grid_size
        self.patch_embed = nn.Conv2d(
            3, cfg.embed_dim, kernel_size=cfg.patch_size, stride=cfg.patch_size
        )
        self.pos_embed = nn.Parameter(torch.zeros(1, g * g, cfg.embed_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio)
            for _ in range(cfg.blocks)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def embed(self, rgb: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(rgb)
        x = x.flatten(2).transpose(1, 2)
        return x + self.pos_embed


class LwcnnBlock(nn.Module):
    """Lightweight fusion block ahead of one transformer block.

    Reads the token grid and the depth-path state, advances the state with
    two spatial convolutions, and writes a residual back to the tokens
    through a zero-initialized projection.
    """

    def __init__(self, embed_dim: int, channels: int, grid: int):
        super().__init__()
        self.grid = grid
        self.reduce = nn.Conv2d(embed_dim, channels, kernel_size=1)
        self.conv1 = nn.Conv2d(2 * channels, channels, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.act = nn.GELU()
        self.out_proj = nn.Conv2d(channels, embed_dim, kernel_size=1)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, tokens: torch.Tensor, state: torch.Tensor):
        b, n, d = tokens.shape
        g = self.grid
        grid = tokens.transpose(1, 2).reshape(b, d, g, g)
        h = torch.cat([self.reduce(grid), state], dim=1)
        h = self.act(self.conv1(h))
        new_state = self.act(self.conv2(h))
        update = self.out_proj(new_state)
        tokens = tokens + update.flatten(2).transpose(1, 2)
        return tokens, new_state


class DualBackbone(nn.Module):
    """B fusion blocks interleaved with B transformer blocks; only the final
    group's output feeds the decoder. Parameter groups are named
    ``transformer.*``, ``cnn.*``, ``stem.*``."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        if cfg.embed_dim % 2 != 0:
            raise ConfigError("backbone.embed_dim: must be even")
        self.cfg = cfg
        g = cfg.grid_size
        self.transformer = TransformerBranch(cfg)
        self.cnn = nn.ModuleList(
            LwcnnBlock(cfg.embed_dim, cfg.cnn_channels, g) for _ in range(cfg.blocks)
        )
        self.stem = nn.Conv2d(
            1, cfg.cnn_channels, kernel_size=cfg.patch_size, stride=cfg.patch_size
        )
        part = self.parameter_partition()
        ratio = part["cnn"] / part["transformer"]
        if ratio >= COMPLEXITY_RATIO_CAP:
            raise ConfigError(
                f"backbone.cnn_channels: CNN branch has {part['cnn']} parameters, "
                f"{ratio:.3f} of the transformer branch; must stay below "
                f"{COMPLEXITY_RATIO_CAP}"
            )

    @property
    def grid_size(self) -> int:
        return self.cfg.grid_size

    def _check_input(self, rgb: torch.Tensor) -> None:
        s = self.cfg.image_size
        if rgb.ndim != 4 or rgb.shape[1] != 3 or rgb.shape[2] != s or rgb.shape[3] != s:
            raise ConfigError(
                f"expected rgb of shape (B, 3, {s}, {s}), got {tuple(rgb.shape)}"
            )

    def forward(self, rgb: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
        """Fused forward: returns the final token grid as (B, D, G, G)."""
        self._check_input(rgb)
        if depth.ndim == 3:
            depth = depth.unsqueeze(1)
        if depth.shape[2:] != rgb.shape[2:]:
            raise ConfigError(
                f"depth shape {tuple(depth.shape)} does not match rgb {tuple(rgb.shape)}"
            )
        tokens = self.transformer.embed(rgb)
        state = self.stem(depth)
        for i, (fuse, block) in enumerate(zip(self.cnn, self.transformer.blocks)):
            tokens, state = fuse(tokens, state)
            tokens = block(tokens)
            if not torch.isfinite(tokens).all():
                raise NumericFault(f"non-finite encoder activations after stage {i}")
        return self._to_grid(self.transformer.norm(tokens))

    def forward_rgb(self, rgb: torch.Tensor) -> torch.Tensor:
        """RGB-only forward with the CNN branch removed (baseline path)."""
        self._check_input(rgb)
        tokens = self.transformer.embed(rgb)
        for i, block in enumerate(self.transformer.blocks):
            tokens = block(tokens)
            if not torch.isfinite(tokens).all():
                raise NumericFault(f"non-finite encoder activations after stage {i}")
        return self._to_grid(self.transformer.norm(tokens))

    def _to_grid(self, tokens: torch.Tensor) -> torch.Tensor:
        b, n, d = tokens.shape
        g = self.grid_size
        return tokens.transpose(1, 2).reshape(b, d, g, g)

    def parameter_partition(self) -> dict:
        """Exact per-branch parameter counts; sums to the backbone total."""
        counts = {"transformer": 0, "cnn": 0, "other": 0}
        for name, p in self.named_parameters():
            if name.startswith("transformer."):
                counts["transformer"] += p.numel()
            elif name.startswith("cnn."):
                counts["cnn"] += p.numel()
            else:
                counts["other"] += p.numel()
        return counts
