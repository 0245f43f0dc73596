"""Latent-space geometric grounding: FPN fusion plus depth/contour heads.

The heads read per-block video-token features, never write back into the
denoiser stream, so toggling them changes only the training signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import ModelConfig
from .errors import ValidationError


@dataclass
class GroundingOutput:
    latent_depth: torch.Tensor  # (T', p^2, H', W')
    latent_seg: torch.Tensor  # (T', p^2, H', W')


def fpn_aggregate(block_features: list[torch.Tensor], level_projs: list[torch.Tensor], fuse_proj: torch.Tensor) -> torch.Tensor:
    """Top-down accumulation of per-level 1x1 projections, then a fusion proj.

    The deepest block seeds the accumulator; shallower levels are projected
    and added in turn. All levels must share (tokens, dim).
    """
    if len(block_features) < 2:
        raise ValidationError("feature pyramid needs at least 2 levels")
    if len(level_projs) != len(block_features):
        raise ValidationError("one projection per level required")
    shapes = {tuple(f.shape) for f in block_features}
    if len(shapes) != 1:
        raise ValidationError("all levels must share one shape")
    acc = block_features[-1] @ level_projs[-1].T
    for lvl in range(len(block_features) - 2, -1, -1):
        acc = acc + block_features[lvl] @ level_projs[lvl].T
    return acc @ fuse_proj.T


class GroundingHeads(nn.Module):
    """Owns the FPN projections and the two linear prediction heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.level_projs = nn.ParameterList(
            nn.Parameter(torch.randn(cfg.fpn_dim, cfg.d_model) * (cfg.d_model**-0.5))
            for _ in range(cfg.n_blocks)
        )
        self.fuse_proj = nn.Parameter(torch.randn(cfg.fpn_dim, cfg.fpn_dim) * (cfg.fpn_dim**-0.5))
        self.depth_head = nn.Linear(cfg.fpn_dim, cfg.scalar_channels)
        self.contour_head = nn.Linear(cfg.fpn_dim, cfg.scalar_channels)

    def fused(self, block_features: list[torch.Tensor]) -> torch.Tensor:
        return fpn_aggregate(block_features, list(self.level_projs), self.fuse_proj)

    def forward(self, block_features: list[torch.Tensor], video_grid: tuple[int, int, int]) -> GroundingOutput:
        fused = self.fused(block_features)
        t, hh, ww = video_grid
        depth = self.depth_head(fused).reshape(t, hh, ww, -1).permute(0, 3, 1, 2)
        seg = self.contour_head(fused).reshape(t, hh, ww, -1).permute(0, 3, 1, 2)
        return GroundingOutput(latent_depth=depth, latent_seg=seg)


def depth_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between predicted and target latent depth."""
    if pred.shape != gt.shape:
        raise ValidationError("depth prediction and target shapes differ")
    return (pred - gt).abs().mean()


def seg_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between predicted and target latent masks."""
    if pred.shape != gt.shape:
        raise ValidationError("segmentation prediction and target shapes differ")
    return ((pred - gt) ** 2).mean()
