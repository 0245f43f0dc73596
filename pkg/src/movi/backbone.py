"""Miniature denoising transformer with the multi-view retrieval path.

Every block runs full self-attention over the whole token stream (video +
reference segments + optional prompt token), then the bank cross-attention
update scaled by alpha_ref, then an MLP. Training uses a rectified-flow
velocity objective; sampling integrates the learned field with Euler steps
from t=1 (noise) to t=0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
from torch import nn

from .conditioning import FeatureBank, InjectionLayout, MVAttentionParams, mv_cross_attention
from .errors import ValidationError
from .latentcodec import LatentVideo, latent_from_tokens

# Velocities scale like 1/t near t=0; the head basis clamps there.
T_FLOOR = 0.05


@dataclass
class Toggles:
    """Component switches mirroring the ablation table columns."""

    mvp: bool = True  # panoramic multi-view prior (off -> single original view)
    ipli: bool = True  # latent injection path
    mvfb: bool = True  # feature-bank retrieval path
    scc: bool = True  # semantic consistency check
    ch: bool = True  # contour head
    dh: bool = True  # depth head
    tco: bool = True  # temporal consistency optimization

    def validate(self) -> None:
        if self.scc and not self.mvfb:
            raise ValidationError("scc requires mvfb: consistency scores act on the feature bank")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("mvp", "ipli", "mvfb", "scc", "ch", "dh", "tco")}

    @classmethod
    def from_dict(cls, d: dict) -> "Toggles":
        return cls(**d)


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 4
    mlp_ratio: int = 4
    patch_size: int = 4
    max_tokens: int = 2048
    time_embed_dim: int = 32
    fpn_dim: int = 32
    embed_dim: int = 48  # frozen provider embedding width

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ValidationError("d_model must be divisible by n_heads")
        if self.n_blocks < 2:
            raise ValidationError("n_blocks must be >= 2 (feature pyramid needs two taps)")
        if self.patch_size < 1 or self.max_tokens < 1 or self.time_embed_dim < 2:
            raise ValidationError("invalid model config")
        if self.time_embed_dim % 2:
            raise ValidationError("time_embed_dim must be even")

    @property
    def latent_channels(self) -> int:
        return 3 * self.patch_size**2

    @property
    def scalar_channels(self) -> int:
        return self.patch_size**2

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_blocks": self.n_blocks,
            "mlp_ratio": self.mlp_ratio,
            "patch_size": self.patch_size,
            "max_tokens": self.max_tokens,
            "time_embed_dim": self.time_embed_dim,
            "fpn_dim": self.fpn_dim,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ConditioningPack:
    """Everything the denoiser consumes besides the noisy latent tokens."""

    cond_tokens: torch.Tensor  # (S, C_cond) from identity_latent_inject
    layout: InjectionLayout
    bank: FeatureBank | None = None
    alpha_ref: float = 0.0
    prompt_embedding: np.ndarray | None = None


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of a scalar t in [0, 1] (internally scaled x1000)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = t.reshape(-1, 1) * 1000.0 * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        L, D = x.shape
        h = self.n_heads
        dh = D // h
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.reshape(L, h, dh).permute(1, 0, 2)
        k = k.reshape(L, h, dh).permute(1, 0, 2)
        v = v.reshape(L, h, dh).permute(1, 0, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / dh**0.5, dim=-1)
        out = (attn @ v).permute(1, 0, 2).reshape(L, D)
        return self.proj(out)


class Block(nn.Module):
    """Pre-LN transformer block with adaLN-zero time modulation.

    The multi-view retrieval update sits between the context attention and the
    MLP: queries are projected from the post-attention stream and the scaled
    attention output is added back residually.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.ln1 = nn.LayerNorm(d, elementwise_affine=False)
        self.attn = SelfAttention(d, cfg.n_heads)
        self.mv_query = nn.Linear(d, d, bias=False)
        self.mv_out = nn.Linear(d, d, bias=False)
        self.ln2 = nn.LayerNorm(d, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(d, cfg.mlp_ratio * d), nn.GELU(), nn.Linear(cfg.mlp_ratio * d, d)
        )
        self.ada = nn.Linear(d, 6 * d)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)
        self.n_heads = cfg.n_heads

    def forward(
        self, x: torch.Tensor, t_emb: torch.Tensor, bank: FeatureBank | None, alpha_ref: float
    ) -> torch.Tensor:
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = self.ada(t_emb).chunk(6, dim=-1)
        x = x + gate_a * self.attn(self.ln1(x) * (1 + scale_a) + shift_a)
        if bank is not None and alpha_ref != 0.0:
            params = MVAttentionParams(query_proj=self.mv_query.weight, out_proj=self.mv_out.weight)
            x = mv_cross_attention(x[None], bank, alpha_ref, self.n_heads, params)[0]
        x = x + gate_m * self.mlp(self.ln2(x) * (1 + scale_m) + shift_m)
        return x


class Denoiser(nn.Module):
    """Token-level velocity predictor over the conditioned sequence."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.d_model
        c_lat = cfg.latent_channels
        c_cond = c_lat + cfg.scalar_channels + 1
        self.in_proj = nn.Linear(c_lat + c_cond, d)
        self.prompt_proj = nn.Linear(cfg.embed_dim, d)
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_tokens, d) * 0.02)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_embed_dim, d), nn.SiLU(), nn.Linear(d, d)
        )
        self.bank_key_proj = nn.Linear(c_lat, d, bias=False)
        self.bank_value_proj = nn.Linear(c_lat, d, bias=False)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_blocks))
        self.out_ln = nn.LayerNorm(d, elementwise_affine=False)
        self.out_ada = nn.Linear(d, 2 * d)
        nn.init.zeros_(self.out_ada.weight)
        nn.init.zeros_(self.out_ada.bias)
        # The head also sees the raw noisy/conditioning channels: the dominant
        # "subtract the known background" component of the velocity is then
        # linear in its inputs.
        self.out_head = nn.Linear(d + c_lat + c_cond, c_lat)
        nn.init.zeros_(self.out_head.weight)
        nn.init.zeros_(self.out_head.bias)

    def forward(
        self,
        noisy_tokens: torch.Tensor,
        t: float | torch.Tensor,
        pack: ConditioningPack,
        toggles: Toggles | None = None,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Returns (velocity over video tokens, per-block video-token features)."""
        toggles = toggles or Toggles()
        layout = pack.layout
        cond = pack.cond_tokens
        dtype = self.out_head.weight.dtype
        cond = cond.to(dtype)
        if noisy_tokens.shape[0] != layout.n_video:
            raise ValidationError("noisy token count does not match the layout")
        if cond.shape[0] != layout.total or cond.shape[1] != layout.cond_channels:
            raise ValidationError("conditioning tokens do not match the layout")
        t = torch.as_tensor(t, dtype=dtype)
        if t.ndim != 0:
            raise ValidationError("t must be a scalar")
        if not (0.0 <= float(t) <= 1.0):
            raise ValidationError("t must lie in [0, 1]")

        noisy_full = torch.zeros(layout.total, noisy_tokens.shape[1], dtype=dtype)
        noisy_full[layout.video_slice] = noisy_tokens.to(dtype)
        x = self.in_proj(torch.cat([noisy_full, cond], dim=1))
        if pack.prompt_embedding is not None:
            e = torch.as_tensor(np.asarray(pack.prompt_embedding), dtype=dtype)
            x = torch.cat([x, self.prompt_proj(e)[None]], dim=0)
        if x.shape[0] > self.cfg.max_tokens:
            raise ValidationError("sequence exceeds max_tokens")
        x = x + self.pos_emb[: x.shape[0]].to(dtype)
        t_emb = self.time_mlp(timestep_embedding(t, self.cfg.time_embed_dim))

        use_bank = toggles.mvfb and pack.bank is not None and pack.alpha_ref != 0.0
        features = []
        for block in self.blocks:
            x = block(x, t_emb, pack.bank if use_bank else None, pack.alpha_ref if use_bank else 0.0)
            features.append(x[layout.video_slice])
        shift_o, scale_o = self.out_ada(t_emb).chunk(2, dim=-1)
        video = self.out_ln(x[layout.video_slice]) * (1 + scale_o) + shift_o
        vs = layout.video_slice
        velocity = self.out_head(torch.cat([video, noisy_full[vs], cond[vs]], dim=1))
        return velocity, features

    def bank_projections(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.bank_key_proj.weight, self.bank_value_proj.weight


def velocity_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValidationError("prediction and target shapes differ")
    return ((pred - target) ** 2).mean()


def diffusion_loss(
    model: Denoiser,
    x0_tokens: torch.Tensor,
    pack: ConditioningPack,
    generator: torch.Generator,
    toggles: Toggles | None = None,
    forward_fn: Any = None,
) -> tuple[torch.Tensor, dict]:
    """Rectified-flow objective over video tokens.

    Draws t ~ U(0,1) and eps ~ N(0,I), mixes x_t = (1-t) x0 + t eps, and
    regresses the velocity eps - x0. Returns (loss, info) where info carries
    the draw and the prediction for logging and oracle tests.
    """
    dtype = x0_tokens.dtype
    t = torch.rand((), generator=generator, dtype=dtype)
    eps = torch.randn(x0_tokens.shape, generator=generator, dtype=dtype)
    x_t = (1.0 - t) * x0_tokens + t * eps
    target = eps - x0_tokens
    fwd = forward_fn if forward_fn is not None else lambda *a, **k: model(*a, **k)
    pred, features = fwd(x_t, t, pack, toggles)
    loss = velocity_mse(pred, target)
    info = {"t": t, "eps": eps, "x_t": x_t, "pred": pred, "target": target, "features": features}
    return loss, info


def sample(
    model: Denoiser,
    pack: ConditioningPack,
    steps: int = 50,
    generator: torch.Generator | None = None,
    toggles: Toggles | None = None,
) -> LatentVideo:
    """Euler-integrate dx/dt = v(x, t) from t=1 (noise) down to t=0."""
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    layout = pack.layout
    cfg = model.cfg
    dtype = model.out_head.weight.dtype
    x = torch.randn(layout.n_video, cfg.latent_channels, generator=generator, dtype=dtype)
    dt = 1.0 / steps
    with torch.no_grad():
        for i in range(steps):
            t = 1.0 - i * dt
            v, _ = model(x, t, pack, toggles)
            x = x - dt * v
    return latent_from_tokens(x, layout.video_grid, cfg.patch_size, 3)


def flops_estimate(
    cfg: ModelConfig, n_video: int, n_ref: int, bank_tokens: int, has_prompt: bool = True
) -> int:
    """Analytic multiply-add count for one forward pass."""
    L = n_video + n_ref + (1 if has_prompt else 0)
    d = cfg.d_model
    per_block = (
        2 * (4 * L * d * d)  # qkv + out projections
        + 2 * (2 * L * L * d)  # attention scores + weighted sum
        + 2 * (2 * L * d * cfg.mlp_ratio * d)  # mlp
    )
    if bank_tokens:
        per_block += 2 * (2 * L * d * d) + 2 * (2 * L * bank_tokens * d)
    total = cfg.n_blocks * per_block
    total += 2 * L * (cfg.latent_channels + cfg.latent_channels + cfg.scalar_channels + 1) * d
    total += 2 * n_video * d * cfg.latent_channels
    if bank_tokens:
        total += 2 * (2 * bank_tokens * cfg.latent_channels * d)
    return total
