"""Dual-path multi-view reference conditioning.

Two injection routes feed the denoiser:
  * latent injection — encoded reference views are appended to the token
    sequence next to the fused background/control tokens, so the object's
    appearance rides along the denoised stream;
  * feature-bank retrieval — reference views are projected once into
    key/value pairs and every block queries them through a separate
    cross-attention path scaled by alpha_ref.

Quality-aware weighting scores each view against the prompt with a frozen
embedding provider; the mean score modulates alpha_ref globally and the
per-view scores shrink that view's bank tokens.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Any, Protocol

import numpy as np
import torch

from .errors import ValidationError
from .latentcodec import LatentVideo, tokens_from_latent


def sigmoid(x: Any) -> Any:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Semantic consistency check
# ---------------------------------------------------------------------------


class EmbeddingProvider(Protocol):
    def embed_text(self, prompt: str) -> np.ndarray: ...

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...


class ToyEmbeddingProvider:
    """Deterministic stand-in for a frozen image/text encoder.

    Images embed as a mean-centered 4x4 average-pooled color grid; color words
    embed as the grid a flat image of that color would produce, so text-image
    cosine rises with shared colors and falls when corruption grays them out.
    Non-color words contribute small seeded hash vectors.
    """

    GRID = 4
    NOISE_SCALE = 0.15

    def __init__(self) -> None:
        from .synthworld.prompts import COLOR_TABLE

        self._colors = {name: np.asarray(rgb, dtype=np.float64) for name, rgb in COLOR_TABLE.items()}
        self.dim = 3 * self.GRID * self.GRID
        # Featureless inputs map to a cell-alternating pattern that is exactly
        # orthogonal to every (cell-constant) color-word vector, so an all-gray
        # image scores near sigma(0) against any prompt.
        signs = np.repeat(np.where(np.arange(self.GRID * self.GRID) % 2 == 0, 1.0, -1.0), 3)
        self._fallback = signs / np.linalg.norm(signs)

    def _unit(self, v: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(v)
        if n < 1e-9:
            return self._fallback.copy()
        return v / n

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValidationError("embed_image expects (H, W, 3)")
        h, w = img.shape[:2]
        g = self.GRID
        ys = (np.arange(h) * g // h).astype(int)
        xs = (np.arange(w) * g // w).astype(int)
        pooled = np.zeros((g, g, 3))
        counts = np.zeros((g, g, 1))
        np.add.at(pooled, (ys[:, None].repeat(w, 1), xs[None, :].repeat(h, 0)), img)
        np.add.at(counts, (ys[:, None].repeat(w, 1), xs[None, :].repeat(h, 0)), 1.0)
        pooled /= counts
        return self._unit((pooled - 0.5).ravel())

    def _word_vector(self, word: str) -> np.ndarray:
        if word in self._colors:
            cell = self._colors[word] - 0.5
            return np.tile(cell, self.GRID * self.GRID)
        seed = int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "little")
        v = np.random.default_rng(seed).normal(size=self.dim)
        return self.NOISE_SCALE * v / np.linalg.norm(v)

    def embed_text(self, prompt: str) -> np.ndarray:
        words = [w.strip(".,") for w in prompt.lower().split()]
        words = [w for w in words if w]
        if not words:
            raise ValidationError("empty prompt")
        total = np.zeros(self.dim)
        for w in words:
            total += self._word_vector(w)
        return self._unit(total)


@dataclass
class ConsistencyReport:
    logits: np.ndarray  # (N,)
    per_view_scores: np.ndarray  # (N,) in (0, 1)
    mean_score: float  # in (0, 1)
    temperature: float

    @classmethod
    def all_ones(cls, n_views: int) -> "ConsistencyReport":
        # Check disabled: every view fully trusted. 745 keeps logits finite
        # while sigmoid saturates to exactly 1.0 in float64.
        return cls(
            logits=np.full(n_views, 745.0),
            per_view_scores=np.ones(n_views),
            mean_score=1.0,
            temperature=1.0,
        )


def consistency_scores(
    prompt_embedding: np.ndarray, view_embeddings: np.ndarray, tau: float = 1.0
) -> ConsistencyReport:
    """Temperature-scaled cosine logits per view, mapped through a sigmoid."""
    if tau <= 0:
        raise ValidationError("temperature must be > 0")
    p = np.asarray(prompt_embedding, dtype=np.float64)
    v = np.atleast_2d(np.asarray(view_embeddings, dtype=np.float64))
    if abs(np.linalg.norm(p) - 1.0) > 1e-6:
        raise ValidationError("prompt embedding must be unit-norm")
    norms = np.linalg.norm(v, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValidationError("view embeddings must be unit-norm")
    logits = (v @ p) / tau
    return ConsistencyReport(
        logits=logits,
        per_view_scores=sigmoid(logits),
        mean_score=float(sigmoid(logits.mean())),
        temperature=float(tau),
    )


def modulate_scale(alpha0: float, mean_score: float) -> float:
    """Global reference scale: alpha_ref = alpha0 * mean consistency score."""
    if alpha0 < 0:
        raise ValidationError("alpha0 must be >= 0")
    return float(alpha0) * float(mean_score)


# ---------------------------------------------------------------------------
# Multi-view feature bank
# ---------------------------------------------------------------------------


@dataclass
class FeatureBank:
    keys: torch.Tensor  # (N, L_v, d)
    values: torch.Tensor  # (N, L_v, d)
    per_view_scores: torch.Tensor  # (N,)

    @property
    def n_views(self) -> int:
        return self.keys.shape[0]

    def flat_tokens(self) -> tuple[torch.Tensor, torch.Tensor]:
        """All N * L_v key/value tokens concatenated along the sequence axis."""
        d = self.keys.shape[-1]
        return self.keys.reshape(-1, d), self.values.reshape(-1, d)


def build_feature_bank(
    view_latents: list[LatentVideo], key_proj: torch.Tensor, value_proj: torch.Tensor
) -> FeatureBank:
    """Project each view's latent tokens to key/value pairs of dim d.

    key_proj / value_proj are (d, C) matrices applied to every token; scores
    start at 1 until a consistency report rescales them.
    """
    if not view_latents:
        raise ValidationError("need at least one view latent")
    grids = {tuple(v.data.shape) for v in view_latents}
    if len(grids) != 1:
        raise ValidationError("all view latents must share one shape")
    tokens = []
    for v in view_latents:
        tok = tokens_from_latent(v)
        if not torch.is_tensor(tok):
            tok = torch.as_tensor(np.asarray(tok), dtype=key_proj.dtype)
        tokens.append(tok.to(key_proj.dtype))
    stack = torch.stack(tokens)  # (N, L_v, C)
    if stack.shape[-1] != key_proj.shape[1] or stack.shape[-1] != value_proj.shape[1]:
        raise ValidationError("projection width does not match latent channels")
    keys = stack @ key_proj.T
    values = stack @ value_proj.T
    return FeatureBank(
        keys=keys,
        values=values,
        per_view_scores=torch.ones(len(view_latents), dtype=keys.dtype, device=keys.device),
    )


def scale_bank(bank: FeatureBank, report: ConsistencyReport) -> FeatureBank:
    """Shrink each view's key and value tokens by its consistency score."""
    if bank.n_views != len(report.per_view_scores):
        raise ValidationError("bank and report disagree on the view count")
    s = torch.as_tensor(report.per_view_scores, dtype=bank.keys.dtype, device=bank.keys.device)
    return FeatureBank(
        keys=bank.keys * s[:, None, None],
        values=bank.values * s[:, None, None],
        per_view_scores=s,
    )


@dataclass
class MVAttentionParams:
    query_proj: torch.Tensor  # (D, D)
    out_proj: torch.Tensor  # (D, D)


def mv_cross_attention(
    x: torch.Tensor,
    bank: FeatureBank,
    alpha_ref: float,
    n_heads: int,
    params: MVAttentionParams,
) -> torch.Tensor:
    """Retrieve from the bank and blend: x + alpha_ref * Attn(q(x), K, V).

    x is (B, L, D); keys/values are the concatenation of all N * L_v bank
    tokens; softmax uses the per-head scale 1 / sqrt(D / n_heads).
    """
    if x.ndim != 3:
        raise ValidationError("x must be (B, L, D)")
    B, L, D = x.shape
    if D % n_heads:
        raise ValidationError("model dim must be divisible by the head count")
    if bank.keys.shape[-1] != D:
        raise ValidationError("bank token dim must equal the model dim")
    dh = D // n_heads
    k, v = bank.flat_tokens()  # (M, D)
    q = x @ params.query_proj.T
    q = q.reshape(B, L, n_heads, dh).permute(0, 2, 1, 3)  # (B, h, L, dh)
    kh = k.reshape(-1, n_heads, dh).permute(1, 0, 2)  # (h, M, dh)
    vh = v.reshape(-1, n_heads, dh).permute(1, 0, 2)
    logits = torch.einsum("bhld,hmd->bhlm", q, kh) / (dh**0.5)
    attn = torch.softmax(logits, dim=-1)
    out = torch.einsum("bhlm,hmd->bhld", attn, vh)
    out = out.permute(0, 2, 1, 3).reshape(B, L, D)
    out = out @ params.out_proj.T
    return x + alpha_ref * out


# ---------------------------------------------------------------------------
# Identity-preserving latent injection
# ---------------------------------------------------------------------------


@dataclass
class InjectionLayout:
    """Where each token class lives inside the conditioned sequence."""

    video_grid: tuple[int, int, int]  # (T', H', W')
    view_grid: tuple[int, int, int]  # (N, h', w')
    bg_channels: int
    ctrl_channels: int

    @property
    def n_video(self) -> int:
        t, h, w = self.video_grid
        return t * h * w

    @property
    def n_ref(self) -> int:
        n, h, w = self.view_grid
        return n * h * w

    @property
    def total(self) -> int:
        return self.n_video + self.n_ref

    @property
    def cond_channels(self) -> int:
        return self.bg_channels + self.ctrl_channels + 1

    @property
    def video_slice(self) -> slice:
        return slice(0, self.n_video)

    @property
    def ref_slice(self) -> slice:
        return slice(self.n_video, self.total)


def identity_latent_inject(
    background_latent: LatentVideo,
    control_latent: LatentVideo,
    view_latents: list[LatentVideo],
) -> tuple[torch.Tensor, InjectionLayout]:
    """Fuse background/control channelwise and append view tokens.

    Returns (cond_tokens, layout): cond_tokens is (S, C_bg + C_ctrl + 1) with
    the last channel flagging reference-segment tokens; layout records which
    token indices are video vs reference so losses can mask to video tokens.
    Passing an empty view list disables the injection path.
    """
    if background_latent.grid != control_latent.grid:
        raise ValidationError("background and control latents must share the grid")
    bg_tok = _as_tensor(tokens_from_latent(background_latent))
    ctrl_tok = _as_tensor(tokens_from_latent(control_latent))
    c_bg, c_ctrl = bg_tok.shape[1], ctrl_tok.shape[1]

    video = torch.cat([bg_tok, ctrl_tok, torch.zeros(len(bg_tok), 1, dtype=bg_tok.dtype)], dim=1)

    if view_latents:
        grids = {v.grid for v in view_latents}
        if len(grids) != 1:
            raise ValidationError("view latents must share one grid")
        if view_latents[0].channels != c_bg:
            raise ValidationError("view latent channels must match the background latent")
        hh, ww = view_latents[0].grid[1:]
        refs = []
        for v in view_latents:
            tok = _as_tensor(tokens_from_latent(v))
            pad = torch.zeros(len(tok), c_ctrl, dtype=tok.dtype)
            flag = torch.ones(len(tok), 1, dtype=tok.dtype)
            refs.append(torch.cat([tok, pad, flag], dim=1))
        cond = torch.cat([video] + refs, dim=0)
        view_grid = (len(view_latents), hh, ww)
    else:
        cond = video
        view_grid = (0, 0, 0)

    layout = InjectionLayout(
        video_grid=background_latent.grid,
        view_grid=view_grid,
        bg_channels=c_bg,
        ctrl_channels=c_ctrl,
    )
    return cond, layout


def _as_tensor(x: Any) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float32))
