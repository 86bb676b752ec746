"""Three-mask decoder with an IoU score head.

Two-way cross-attention between the prompt/output tokens and the image
embedding, followed by transposed-convolution upscaling and per-candidate
hypernetwork MLPs. The IoU head ships untrained (zero-initialized final
layer, so all three scores are equal) and stays frozen; the three candidate
paths are initialized identically so the lowest-index tiebreak in training
and the all-equal-score fallback at inference select the same canonical
path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DataError

NUM_MASKS = 3


@dataclass
class MaskTriplet:
    """Per-prompt decoder output: three mask logit maps and three scores."""

    logits: torch.Tensor  # (B, 3, H, W)
    iou_scores: torch.Tensor  # (B, 3), each in [0, 1]


class Mlp(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int, depth: int):
        super().__init__()
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        self.layers = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class CrossAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        b, nq, d = q.shape
        h = self.heads
        q = self.q_proj(q).reshape(b, nq, h, d // h).transpose(1, 2)
        k = self.k_proj(k).reshape(b, k.shape[1], h, d // h).transpose(1, 2)
        v = self.v_proj(v).reshape(b, v.shape[1], h, d // h).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        out = (attn.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, nq, d)
        return self.out_proj(out)


class TwoWayBlock(nn.Module):
    """Token self-attention, token->image and image->token cross-attention."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, skip_first_pe: bool):
        super().__init__()
        self.skip_first_pe = skip_first_pe
        self.self_attn = CrossAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_t2i = CrossAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.GELU(), nn.Linear(mlp_dim, dim))
        self.norm3 = nn.LayerNorm(dim)
        self.cross_i2t = CrossAttention(dim, heads)
        self.norm4 = nn.LayerNorm(dim)

    def forward(self, tokens, image, token_pe, image_pe):
        if self.skip_first_pe:
            tokens = self.norm1(tokens + self.self_attn(tokens, tokens, tokens))
        else:
            q = tokens + token_pe
            tokens = self.norm1(tokens + self.self_attn(q, q, tokens))
        q = tokens + token_pe
        k = image + image_pe
        tokens = self.norm2(tokens + self.cross_t2i(q, k, image))
        tokens = self.norm3(tokens + self.mlp(tokens))
        q = tokens + token_pe
        k = image + image_pe
        image = self.norm4(image + self.cross_i2t(k, q, tokens))
        return tokens, image


class TwoWayTransformer(nn.Module):
    def __init__(self, depth: int, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.layers = nn.ModuleList(
            TwoWayBlock(dim, heads, mlp_dim, skip_first_pe=(i == 0))
            for i in range(depth)
        )
        self.final_t2i = CrossAttention(dim, heads)
        self.norm_final = nn.LayerNorm(dim)

    def forward(self, image_grid, image_pe, tokens):
        b, d, g, _ = image_grid.shape
        image = image_grid.flatten(2).transpose(1, 2)
        pe = image_pe.flatten(2).transpose(1, 2) if image_pe.ndim == 4 else image_pe
        if pe.shape[0] != b:
            pe = pe.expand(b, -1, -1)
        token_pe = tokens
        for layer in self.layers:
            tokens, image = layer(tokens, image, token_pe, pe)
        q = tokens + token_pe
        k = image + pe
        tokens = self.norm_final(tokens + self.final_t2i(q, k, image))
        return tokens, image


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W) maps."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = (x - mu).pow(2).mean(dim=1, keepdim=True)
        x = (x - mu) / torch.sqrt(var + 1e-6)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class IouScoreHead(nn.Module):
    """Per-candidate quality scores. The final layer is zero-initialized, so
    before any training every candidate scores exactly sigmoid(0) = 0.5;
    downstream selection treats all-equal scores as 'untrained' and falls
    back to candidate 0."""

    def __init__(self, dim: int):
        super().__init__()
        self.token = nn.Embedding(1, dim)
        self.mlp = Mlp(dim, dim, NUM_MASKS, depth=3)
        nn.init.zeros_(self.mlp.layers[-1].weight)
        nn.init.zeros_(self.mlp.layers[-1].bias)

    def forward(self, token_out: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.mlp(token_out))


class MaskDecoder(nn.Module):
    def __init__(self, embed_dim: int, heads: int, depth: int = 2):
        super().__init__()
        d = embed_dim
        self.mask_tokens = nn.Embedding(NUM_MASKS, d)
        with torch.no_grad():
            # identical candidate paths at init: the min-of-three tiebreak
            # (lowest index) then deterministically trains candidate 0
            self.mask_tokens.weight[1:] = self.mask_tokens.weight[0]
        self.iou_head = IouScoreHead(d)
        self.transformer = TwoWayTransformer(depth=depth, dim=d, heads=heads, mlp_dim=2 * d)
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(d, d // 4, kernel_size=2, stride=2),
            ChannelLayerNorm(d // 4),
            nn.GELU(),
            nn.ConvTranspose2d(d // 4, d // 8, kernel_size=2, stride=2),
            nn.GELU(),
        )
        first = Mlp(d, d, d // 8, depth=3)
        self.hyper_mlps = nn.ModuleList(Mlp(d, d, d // 8, depth=3) for _ in range(NUM_MASKS))
        for mlp in self.hyper_mlps:
            mlp.load_state_dict(first.state_dict())

    def forward(
        self,
        embedding: torch.Tensor,
        image_pe: torch.Tensor,
        prompt_tokens: torch.Tensor,
        out_size: tuple,
        dense_prompt: torch.Tensor | None = None,
    ) -> MaskTriplet:
        if embedding.ndim != 4:
            raise DataError(
                f"expected image embedding of shape (B, D, G, G), got {tuple(embedding.shape)}"
            )
        if prompt_tokens.shape[0] != embedding.shape[0]:
            raise DataError("prompt batch does not match embedding batch")
        b, d, g, _ = embedding.shape
        if dense_prompt is not None:
            embedding = embedding + dense_prompt
        out = torch.cat(
            [self.iou_head.token.weight, self.mask_tokens.weight], dim=0
        ).unsqueeze(0).expand(b, -1, -1)
        tokens = torch.cat([out, prompt_tokens], dim=1)
        hs, image = self.transformer(embedding, image_pe, tokens)
        iou_out = hs[:, 0]
        mask_out = hs[:, 1 : 1 + NUM_MASKS]

        upscaled = self.upscale(image.transpose(1, 2).reshape(b, d, g, g))
        hyper = torch.stack(
            [self.hyper_mlps[i](mask_out[:, i]) for i in range(NUM_MASKS)], dim=1
        )
        bu, cu, hu, wu = upscaled.shape
        low = (hyper @ upscaled.reshape(bu, cu, hu * wu)).reshape(b, NUM_MASKS, hu, wu)
        logits = F.interpolate(low, size=out_size, mode="bilinear", align_corners=False)
        return MaskTriplet(logits=logits, iou_scores=self.iou_head(iou_out))


def binarize_mask(logits: torch.Tensor | np.ndarray) -> np.ndarray:
    """Threshold at logit 0 (probability 0.5); exact zeros are foreground."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().cpu().numpy()
    return logits >= 0


def choose_mask_index(iou_scores: torch.Tensor | np.ndarray) -> int:
    """Highest-scoring candidate; first index on ties, so the all-equal
    scores of an untrained head fall back to candidate 0."""
    if isinstance(iou_scores, torch.Tensor):
        iou_scores = iou_scores.detach().cpu().numpy()
    return int(np.argmax(iou_scores))
