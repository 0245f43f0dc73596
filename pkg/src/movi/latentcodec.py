"""Exactly invertible pixel <-> latent codec (space-to-depth patching).

Replaces a learned VAE with a lossless rearrangement so that errors measured
in pixel space are attributable to the denoiser alone. Works on numpy arrays
and torch tensors alike; on tensors the ops stay differentiable.

Channel layout: pixel (py, px) of channel c inside a p x p block maps to
latent channel c * p**2 + py * p + px.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from einops import rearrange

from .errors import ValidationError


@dataclass
class LatentVideo:
    data: Any  # (T, C, H', W') array or tensor
    patch_size: int
    source_shape: tuple[int, int, int, int]  # (T, H, W, channels)

    @property
    def grid(self) -> tuple[int, int, int]:
        """(T', H', W') token grid."""
        return (self.data.shape[0], self.data.shape[2], self.data.shape[3])

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        t, h, w, c = self.source_shape
        p = self.patch_size
        if h % p or w % p:
            raise ValidationError("source dims must be divisible by patch_size")
        expect = (t, c * p * p, h // p, w // p)
        if tuple(self.data.shape) != expect:
            raise ValidationError(f"latent shape {tuple(self.data.shape)} != expected {expect}")


def encode(video: Any, patch_size: int) -> LatentVideo:
    """Space-to-depth: each p x p x c pixel block becomes one latent vector."""
    if video.ndim != 4:
        raise ValidationError("video must be (T, H, W, c)")
    t, h, w, c = video.shape
    p = int(patch_size)
    if p < 1:
        raise ValidationError("patch_size must be >= 1")
    if h % p or w % p:
        raise ValidationError(f"frame size {(h, w)} not divisible by patch_size {p}")
    data = rearrange(video, "t (hh p1) (ww p2) c -> t (c p1 p2) hh ww", p1=p, p2=p)
    return LatentVideo(data=data, patch_size=p, source_shape=(t, h, w, c))


def decode(latent: LatentVideo) -> Any:
    """Exact inverse of encode: decode(encode(x)) == x bit-exact."""
    t, h, w, c = latent.source_shape
    p = latent.patch_size
    if latent.channels % (p * p):
        raise ValidationError("latent channel count not divisible by patch_size**2")
    latent.validate()
    return rearrange(latent.data, "t (c p1 p2) hh ww -> t (hh p1) (ww p2) c", p1=p, p2=p, c=c)


def encode_scalar_map(scalar_map: Any, patch_size: int) -> LatentVideo:
    """Encode a (T, H, W) map (mask / depth) as a single-channel video."""
    if scalar_map.ndim != 3:
        raise ValidationError("scalar map must be (T, H, W)")
    return encode(scalar_map[..., None], patch_size)


def tokens_from_latent(latent: LatentVideo) -> Any:
    """Flatten to (T' * H' * W', C) tokens in t-major, row-major order."""
    return rearrange(latent.data, "t c hh ww -> (t hh ww) c")


def latent_from_tokens(tokens: Any, grid: tuple[int, int, int], patch_size: int, source_channels: int) -> LatentVideo:
    """Inverse of tokens_from_latent given the (T', H', W') grid."""
    t, hh, ww = grid
    data = rearrange(tokens, "(t hh ww) c -> t c hh ww", t=t, hh=hh, ww=ww)
    p = patch_size
    return LatentVideo(
        data=data,
        patch_size=p,
        source_shape=(t, hh * p, ww * p, source_channels),
    )


def rasterize_box_signal(boxes: np.ndarray, frame_size: tuple[int, int]) -> np.ndarray:
    """Binary (T, H, W) signal: 1 inside each inclusive box, 0 outside."""
    boxes = np.asarray(boxes)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ValidationError("boxes must be (T, 4)")
    h, w = frame_size
    out = np.zeros((len(boxes), h, w), dtype=np.float64)
    for t, (x0, y0, x1, y1) in enumerate(boxes):
        if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
            raise ValidationError(f"box {t} out of frame bounds")
        out[t, int(y0) : int(y1) + 1, int(x0) : int(x1) + 1] = 1.0
    return out
