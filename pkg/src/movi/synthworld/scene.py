"""Clip synthesis: background + animated object + optional occluder.

Compositing is 2.5D: the object is rasterized per frame at its trajectory
azimuth with the principal point moved to the trajectory center, then
z-buffered against a flat occluder band and the background plane. The
background plane sits at twice the camera distance, so per-pixel nearness
1 - z / z_bg is exactly 0 on background and grows toward the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .camera import CameraPose
from .mesh import MeshSpec, TriMesh, make_object
from .prompts import make_prompt
from .raster import rasterize


@dataclass
class TrajectoryStep:
    center: tuple[float, float]  # (x, y) pixels
    scale: float = 1.0
    azimuth: float = 0.0

    def to_list(self) -> list:
        return [list(self.center), self.scale, self.azimuth]

    @classmethod
    def from_list(cls, v: list) -> "TrajectoryStep":
        return cls(center=tuple(v[0]), scale=v[1], azimuth=v[2])


@dataclass
class BackgroundSpec:
    kind: str = "gradient"  # "gradient" | "stripes" | "noise_texture"
    color_a: tuple[float, float, float] = (0.25, 0.3, 0.45)
    color_b: tuple[float, float, float] = (0.6, 0.55, 0.4)
    axis: str = "y"  # gradient/stripe direction: "x" | "y"
    stripe_width: int = 4
    noise_seed: int | None = None  # resolved by synth_clip when unset
    noise_cell: int = 4

    def validate(self) -> None:
        if self.kind not in ("gradient", "stripes", "noise_texture"):
            raise ValidationError(f"unknown background kind {self.kind!r}")
        if self.axis not in ("x", "y"):
            raise ValidationError("background axis must be 'x' or 'y'")
        if self.stripe_width < 1 or self.noise_cell < 1:
            raise ValidationError("stripe_width and noise_cell must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "color_a": list(self.color_a),
            "color_b": list(self.color_b),
            "axis": self.axis,
            "stripe_width": self.stripe_width,
            "noise_seed": self.noise_seed,
            "noise_cell": self.noise_cell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackgroundSpec":
        return cls(
            kind=d["kind"],
            color_a=tuple(d["color_a"]),
            color_b=tuple(d["color_b"]),
            axis=d["axis"],
            stripe_width=d["stripe_width"],
            noise_seed=d["noise_seed"],
            noise_cell=d["noise_cell"],
        )


@dataclass
class OccluderSpec:
    """Foreground band at a fixed camera distance (nearer than the object)."""

    orientation: str = "vertical"  # "vertical" | "horizontal"
    span: tuple[int, int] = (6, 9)  # pixel range [lo, hi) across the band axis
    color: tuple[float, float, float] = (0.1, 0.35, 0.1)
    distance: float = 2.0

    def validate(self) -> None:
        if self.orientation not in ("vertical", "horizontal"):
            raise ValidationError("occluder orientation must be vertical or horizontal")
        if self.span[0] >= self.span[1]:
            raise ValidationError("occluder span must be non-empty")
        if self.distance <= 0:
            raise ValidationError("occluder distance must be > 0")

    def to_dict(self) -> dict:
        return {
            "orientation": self.orientation,
            "span": list(self.span),
            "color": list(self.color),
            "distance": self.distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OccluderSpec":
        return cls(
            orientation=d["orientation"],
            span=tuple(d["span"]),
            color=tuple(d["color"]),
            distance=d["distance"],
        )


@dataclass
class SceneConfig:
    object: MeshSpec = field(default_factory=MeshSpec)
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    trajectory: list[TrajectoryStep] = field(default_factory=list)
    frame_size: tuple[int, int] = (16, 16)
    occluder: OccluderSpec | None = None
    camera_elevation: float = 15.0
    camera_distance: float = 4.0
    camera_fov: float = 40.0
    mesh_seed: int = 0
    prompt_granularity: int | None = None  # resolved by synth_clip when unset

    @property
    def frame_count(self) -> int:
        return len(self.trajectory)

    def validate(self) -> None:
        self.object.validate()
        self.background.validate()
        if self.frame_count < 2:
            raise ValidationError("need at least 2 trajectory steps (T >= 2)")
        h, w = self.frame_size
        for step in self.trajectory:
            x, y = step.center
            if not (0 <= x < w and 0 <= y < h):
                raise ValidationError("trajectory centers must lie inside the frame")
            if step.scale <= 0:
                raise ValidationError("trajectory scale must be > 0")
        if self.occluder is not None:
            self.occluder.validate()
            if self.occluder.distance >= self.camera_distance:
                raise ValidationError("occluder must be nearer than the object orbit")

    def to_dict(self) -> dict:
        return {
            "object": self.object.to_dict(),
            "background": self.background.to_dict(),
            "trajectory": [s.to_list() for s in self.trajectory],
            "frame_size": list(self.frame_size),
            "occluder": None if self.occluder is None else self.occluder.to_dict(),
            "camera_elevation": self.camera_elevation,
            "camera_distance": self.camera_distance,
            "camera_fov": self.camera_fov,
            "mesh_seed": self.mesh_seed,
            "prompt_granularity": self.prompt_granularity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            object=MeshSpec.from_dict(d["object"]),
            background=BackgroundSpec.from_dict(d["background"]),
            trajectory=[TrajectoryStep.from_list(v) for v in d["trajectory"]],
            frame_size=tuple(d["frame_size"]),
            occluder=None if d["occluder"] is None else OccluderSpec.from_dict(d["occluder"]),
            camera_elevation=d["camera_elevation"],
            camera_distance=d["camera_distance"],
            camera_fov=d["camera_fov"],
            mesh_seed=d["mesh_seed"],
            prompt_granularity=d["prompt_granularity"],
        )


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, 3) in [0, 1]
    masks: np.ndarray  # (T, H, W) uint8 {0, 1}
    boxes: np.ndarray  # (T, 4) int (x_min, y_min, x_max, y_max), inclusive
    depth: np.ndarray  # (T, H, W) in [0, 1], 1 = nearest
    prompt: str = ""

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def mask_bounding_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight inclusive bounding box of a nonempty binary mask."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ValidationError("cannot bound an empty mask")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def _render_background(bg: BackgroundSpec, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    ca = np.asarray(bg.color_a)
    cb = np.asarray(bg.color_b)
    if bg.kind == "gradient":
        n = w if bg.axis == "x" else h
        ramp = np.linspace(0.0, 1.0, n)[:, None]
        line = ca + ramp * (cb - ca)
        img = np.broadcast_to(line[None, :, :], (h, w, 3)) if bg.axis == "x" else np.broadcast_to(line[:, None, :], (h, w, 3))
        return np.ascontiguousarray(img)
    if bg.kind == "stripes":
        n = w if bg.axis == "x" else h
        parity = (np.arange(n) // bg.stripe_width) % 2
        line = np.where(parity[:, None] == 0, ca, cb)
        img = np.broadcast_to(line[None, :, :], (h, w, 3)) if bg.axis == "x" else np.broadcast_to(line[:, None, :], (h, w, 3))
        return np.ascontiguousarray(img)
    # noise_texture: coarse uniform noise upsampled bilinearly
    if bg.noise_seed is None:
        raise ValidationError("noise background requires a resolved noise_seed")
    rng = np.random.default_rng(bg.noise_seed)
    gh = h // bg.noise_cell + 2
    gw = w // bg.noise_cell + 2
    grid = rng.uniform(0.2, 0.8, size=(gh, gw, 3))
    ys = np.arange(h) / bg.noise_cell
    xs = np.arange(w) / bg.noise_cell
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (1 - fy) * ((1 - fx) * g00 + fx * g01) + fy * ((1 - fx) * g10 + fx * g11)


def _occluder_mask(occ: OccluderSpec, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    m = np.zeros((h, w), dtype=bool)
    lo, hi = occ.span
    if occ.orientation == "vertical":
        m[:, max(lo, 0) : min(hi, w)] = True
    else:
        m[max(lo, 0) : min(hi, h), :] = True
    return m


def synth_clip(
    scene: SceneConfig, rng: np.random.Generator
) -> tuple[VideoClip, TriMesh, np.ndarray, SceneConfig]:
    """Render a clip; returns (clip, mesh, clean background video, resolved scene).

    The rng only resolves fields the scene leaves unset (noise seed, prompt
    granularity); the returned resolved SceneConfig re-synthesizes the same
    clip without an rng.
    """
    scene.validate()
    resolved = SceneConfig.from_dict(scene.to_dict())
    if resolved.background.kind == "noise_texture" and resolved.background.noise_seed is None:
        resolved.background.noise_seed = int(rng.integers(0, 2**31 - 1))
    if resolved.prompt_granularity is None:
        resolved.prompt_granularity = int(rng.integers(0, 2))

    h, w = resolved.frame_size
    T = resolved.frame_count
    mesh = make_object(resolved.object, resolved.mesh_seed)
    z_bg = 2.0 * resolved.camera_distance

    background = _render_background(resolved.background, (h, w))
    occ_mask = None
    if resolved.occluder is not None:
        occ_mask = _occluder_mask(resolved.occluder, (h, w))
        max_scale = max(s.scale for s in resolved.trajectory)
        nearest_obj_z = resolved.camera_distance - max_scale * mesh.bounding_radius
        if resolved.occluder.distance >= nearest_obj_z:
            raise ValidationError("occluder depth must be strictly less than object depth")

    clean_frame = background.copy()
    clean_depth = np.zeros((h, w), dtype=np.float64)
    if occ_mask is not None:
        clean_frame[occ_mask] = resolved.occluder.color
        clean_depth[occ_mask] = 1.0 - resolved.occluder.distance / z_bg

    frames = np.empty((T, h, w, 3), dtype=np.float64)
    masks = np.empty((T, h, w), dtype=np.uint8)
    boxes = np.empty((T, 4), dtype=np.int64)
    depth = np.empty((T, h, w), dtype=np.float64)

    for t, step in enumerate(resolved.trajectory):
        pose = CameraPose(
            azimuth=step.azimuth,
            elevation=resolved.camera_elevation,
            distance=resolved.camera_distance,
            fov=resolved.camera_fov,
        )
        sprite, zmap, cover = rasterize(mesh, pose, (h, w), center=step.center, scale=step.scale)
        if cover.any():
            ys, xs = np.nonzero(cover)
            if ys.min() == 0 or xs.min() == 0 or ys.max() == h - 1 or xs.max() == w - 1:
                raise ValidationError(f"trajectory leaves the frame at step {t}")

        frame = clean_frame.copy()
        frame_depth = clean_depth.copy()
        obj_front = cover if occ_mask is None else (cover & ~occ_mask)
        if not obj_front.any():
            raise ValidationError(f"object fully occluded or invisible at step {t}")
        frame[obj_front] = sprite[obj_front]
        frame_depth[obj_front] = 1.0 - zmap[obj_front] / z_bg

        frames[t] = frame
        masks[t] = obj_front.astype(np.uint8)
        boxes[t] = mask_bounding_box(obj_front)
        depth[t] = frame_depth

    obj_word = resolved.object.shape
    color_names = mesh.color_names if mesh.color_names else ["colorful"]
    prompt = make_prompt(obj_word, color_names, resolved.prompt_granularity)

    clip = VideoClip(frames=frames, masks=masks, boxes=boxes, depth=depth, prompt=prompt)
    bg_video = np.broadcast_to(clean_frame, (T, h, w, 3)).copy()
    return clip, mesh, bg_video, resolved


def clean_background_video(scene: SceneConfig) -> np.ndarray:
    """The object-free video (background + occluder) for a resolved scene."""
    scene.validate()
    h, w = scene.frame_size
    frame = _render_background(scene.background, (h, w))
    if scene.occluder is not None:
        occ = _occluder_mask(scene.occluder, (h, w))
        frame = frame.copy()
        frame[occ] = scene.occluder.color
    return np.broadcast_to(frame, (scene.frame_count, h, w, 3)).copy()


def select_reference_frame(clip: VideoClip) -> int:
    """Index of the frame farthest in time from frame 0, i.e. T - 1."""
    if clip.frame_count < 1:
        raise ValidationError("clip has no frames")
    return clip.frame_count - 1
