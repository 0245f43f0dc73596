"""Panoramic reference rendering and synthesized-artifact corruption."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ValidationError
from .camera import CameraPose
from .mesh import TriMesh
from .raster import BACKGROUND_GRAY, render_view

# Reference renders frame the object tightly so its colors dominate the view.
REFERENCE_DISTANCE_FACTOR = 1.5
REFERENCE_FOV = 90.0


def reference_camera(mesh: TriMesh) -> tuple[float, float]:
    """(distance, fov) placing the object across ~90% of the reference frame."""
    return REFERENCE_DISTANCE_FACTOR * mesh.bounding_radius, REFERENCE_FOV


@dataclass
class MultiViewReferenceSet:
    images: np.ndarray  # (N, h, w, 3) in [0, 1]
    azimuths: np.ndarray  # (N,) degrees, strictly increasing in [0, 360)
    corrupted_flags: np.ndarray  # (N,) bool

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.azimuths = np.asarray(self.azimuths, dtype=np.float64)
        self.corrupted_flags = np.asarray(self.corrupted_flags, dtype=bool)
        if len(self.images) < 1:
            raise ValidationError("reference set needs at least one view")
        if not np.all(np.isfinite(self.images)):
            raise ValidationError("view images must be finite")
        if np.any(self.azimuths < 0) or np.any(self.azimuths >= 360):
            raise ValidationError("azimuths must lie in [0, 360)")
        if len(self.azimuths) > 1 and not np.all(np.diff(self.azimuths) > 0):
            raise ValidationError("azimuths must be strictly increasing")

    @property
    def n_views(self) -> int:
        return len(self.images)


def render_multiview(
    mesh: TriMesh,
    n_views: int,
    elevation: float = 15.0,
    distance: float = 4.0,
    size: tuple[int, int] = (16, 16),
    fov: float = 40.0,
) -> MultiViewReferenceSet:
    """Render n_views references at azimuths k*360/n_views, k = 0..n_views-1."""
    if n_views < 1:
        raise ValidationError("n_views must be >= 1")
    azimuths = np.arange(n_views) * 360.0 / n_views
    images = []
    for az in azimuths:
        pose = CameraPose(azimuth=az, elevation=elevation, distance=distance, fov=fov)
        img, _, _ = render_view(mesh, pose, size)
        images.append(img)
    return MultiViewReferenceSet(
        images=np.stack(images),
        azimuths=azimuths,
        corrupted_flags=np.zeros(n_views, dtype=bool),
    )


def render_single_view(
    mesh: TriMesh,
    azimuth: float,
    elevation: float = 15.0,
    distance: float = 4.0,
    size: tuple[int, int] = (16, 16),
    fov: float = 40.0,
) -> MultiViewReferenceSet:
    """One-view reference set at an arbitrary azimuth (single-view baseline)."""
    pose = CameraPose(azimuth=azimuth, elevation=elevation, distance=distance, fov=fov)
    img, _, _ = render_view(mesh, pose, size)
    return MultiViewReferenceSet(
        images=img[None],
        azimuths=np.array([float(azimuth) % 360.0]),
        corrupted_flags=np.array([False]),
    )


@dataclass
class CorruptionConfig:
    """Per-view, per-type independent corruption probabilities and strengths."""

    p_blur: float = 0.1
    p_warp: float = 0.1
    p_hole: float = 0.1
    blur_sigma: float = 1.5
    warp_amplitude: float = 1.5  # pixels
    hole_frac: tuple[float, float] = (0.25, 0.5)  # min/max side as frame fraction

    def validate(self) -> None:
        for p in (self.p_blur, self.p_warp, self.p_hole):
            if not 0.0 <= p <= 1.0:
                raise ValidationError("corruption probabilities must lie in [0, 1]")
        if self.blur_sigma < 0 or self.warp_amplitude < 0:
            raise ValidationError("corruption strengths must be >= 0")
        lo, hi = self.hole_frac
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValidationError("hole_frac must satisfy 0 <= lo <= hi <= 1")

    def to_dict(self) -> dict:
        return {
            "p_blur": self.p_blur,
            "p_warp": self.p_warp,
            "p_hole": self.p_hole,
            "blur_sigma": self.blur_sigma,
            "warp_amplitude": self.warp_amplitude,
            "hole_frac": list(self.hole_frac),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionConfig":
        return cls(
            p_blur=d["p_blur"],
            p_warp=d["p_warp"],
            p_hole=d["p_hole"],
            blur_sigma=d["blur_sigma"],
            warp_amplitude=d["warp_amplitude"],
            hole_frac=tuple(d["hole_frac"]),
        )


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (sx - x0)[..., None]
    wy = (sy - y0)[..., None]
    top = (1 - wx) * img[y0, x0] + wx * img[y0, x1]
    bot = (1 - wx) * img[y1, x0] + wx * img[y1, x1]
    return (1 - wy) * top + wy * bot


def _warp_image(img: np.ndarray, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dx = amplitude * np.sin(2.0 * np.pi * ys / h + phase[0])
    dy = amplitude * np.sin(2.0 * np.pi * xs / w + phase[1])
    return _bilinear_sample(img, xs + dx, ys + dy)


def _punch_hole(img: np.ndarray, frac: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    fh = rng.uniform(frac[0], frac[1])
    fw = rng.uniform(frac[0], frac[1])
    hh = max(1, int(round(fh * h)))
    ww = max(1, int(round(fw * w)))
    y0 = int(rng.integers(0, h - hh + 1))
    x0 = int(rng.integers(0, w - ww + 1))
    out = img.copy()
    out[y0 : y0 + hh, x0 : x0 + ww] = BACKGROUND_GRAY
    return out


def corrupt_views(
    refs: MultiViewReferenceSet, config: CorruptionConfig, rng: np.random.Generator
) -> MultiViewReferenceSet:
    """Apply reconstruction-artifact corruption per view, independently.

    Over-smoothing = Gaussian blur; texture warping = smooth sinusoidal
    displacement resampled bilinearly; missing geometry = rectangular hole
    filled with the background gray. Deterministic given the rng state.
    """
    config.validate()
    images = refs.images.copy()
    flags = refs.corrupted_flags.copy()
    for i in range(refs.n_views):
        img = images[i]
        hit = False
        if rng.uniform() < config.p_blur:
            img = gaussian_filter(img, sigma=(config.blur_sigma, config.blur_sigma, 0.0))
            hit = True
        if rng.uniform() < config.p_warp:
            img = _warp_image(img, config.warp_amplitude, rng)
            hit = True
        if rng.uniform() < config.p_hole:
            img = _punch_hole(img, config.hole_frac, rng)
            hit = True
        if hit:
            images[i] = np.clip(img, 0.0, 1.0)
            flags[i] = True
    return replace(refs, images=images, corrupted_flags=flags)
