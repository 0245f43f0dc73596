"""Clip directory layout and procedural dataset generation.

Each clip lives in its own directory:
    frames/%04d.png   8-bit RGB composited frames
    masks/%04d.png    8-bit binary object masks
    depth/%04d.png    16-bit nearness maps (65535 = nearest)
    views/%d.png      panoramic reference renders
    meta.json         boxes, azimuths, prompt, seed, resolved scene config
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ValidationError
from .mesh import MeshSpec, make_object
from .prompts import sample_palette
from .scene import BackgroundSpec, OccluderSpec, SceneConfig, TrajectoryStep, VideoClip, synth_clip
from .views import MultiViewReferenceSet, reference_camera, render_multiview


def _save_rgb(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _load_rgb(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _save_gray8(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def _load_gray8(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def _save_gray16(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr, mode="I;16").save(path)


def _load_gray16(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 65535.0


@dataclass
class ClipRecord:
    clip: VideoClip
    views: MultiViewReferenceSet
    scene: SceneConfig
    seed: int


def save_clip_dir(
    out_dir: Path,
    clip: VideoClip,
    views: MultiViewReferenceSet,
    scene: SceneConfig,
    seed: int,
) -> None:
    out_dir = Path(out_dir)
    for sub in ("frames", "masks", "depth", "views"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    for t in range(clip.frame_count):
        _save_rgb(out_dir / "frames" / f"{t:04d}.png", clip.frames[t])
        _save_gray8(out_dir / "masks" / f"{t:04d}.png", clip.masks[t].astype(np.float64))
        _save_gray16(out_dir / "depth" / f"{t:04d}.png", clip.depth[t])
    for i in range(views.n_views):
        _save_rgb(out_dir / "views" / f"{i}.png", views.images[i])
    meta = {
        "boxes": clip.boxes.tolist(),
        "azimuths": views.azimuths.tolist(),
        "prompt": clip.prompt,
        "seed": seed,
        "scene": scene.to_dict(),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_clip_dir(clip_dir: Path) -> ClipRecord:
    clip_dir = Path(clip_dir)
    meta_path = clip_dir / "meta.json"
    if not meta_path.exists():
        raise ValidationError(f"missing meta.json in {clip_dir}")
    meta = json.loads(meta_path.read_text())
    scene = SceneConfig.from_dict(meta["scene"])

    frame_paths = sorted((clip_dir / "frames").glob("*.png"))
    if not frame_paths:
        raise ValidationError(f"no frames in {clip_dir}")
    frames = np.stack([_load_rgb(p) for p in frame_paths])
    masks = np.stack(
        [(_load_gray8(clip_dir / "masks" / p.name) > 0.5).astype(np.uint8) for p in frame_paths]
    )
    depth = np.stack([_load_gray16(clip_dir / "depth" / p.name) for p in frame_paths])
    boxes = np.asarray(meta["boxes"], dtype=np.int64)
    clip = VideoClip(frames=frames, masks=masks, boxes=boxes, depth=depth, prompt=meta["prompt"])

    view_paths = sorted((clip_dir / "views").glob("*.png"), key=lambda p: int(p.stem))
    images = np.stack([_load_rgb(p) for p in view_paths])
    views = MultiViewReferenceSet(
        images=images,
        azimuths=np.asarray(meta["azimuths"], dtype=np.float64),
        corrupted_flags=np.zeros(len(view_paths), dtype=bool),
    )
    return ClipRecord(clip=clip, views=views, scene=scene, seed=meta["seed"])


def list_clip_dirs(root: Path) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.glob("clip_*") if (p / "meta.json").exists())


def random_scene(
    rng: np.random.Generator,
    frame_size: tuple[int, int] = (16, 16),
    frames: int = 9,
    min_rotation: float = 90.0,
    occluder_prob: float = 0.3,
) -> SceneConfig:
    """Draw a random scene whose object rotates >= min_rotation over the clip."""
    h, w = frame_size
    shape = "cuboid" if rng.uniform() < 0.5 else "uv_sphere"
    mesh_seed = int(rng.integers(0, 2**31 - 1))
    if shape == "cuboid":
        e = rng.uniform(0.7, 1.1, size=3)
        spec = MeshSpec(shape="cuboid", half_extents=tuple(e), face_colors=None)
    else:
        spec = MeshSpec(shape="uv_sphere", radius=float(rng.uniform(0.8, 1.1)), face_colors=None)

    kind = ("gradient", "stripes", "noise_texture")[int(rng.integers(0, 3))]
    _, pal = sample_palette(2, rng)
    bg = BackgroundSpec(
        kind=kind,
        color_a=tuple(0.3 + 0.4 * pal[0]),
        color_b=tuple(0.3 + 0.4 * pal[1]),
        axis="x" if rng.uniform() < 0.5 else "y",
        stripe_width=int(rng.integers(2, 5)),
        noise_seed=int(rng.integers(0, 2**31 - 1)),
    )

    # Keep the sprite comfortably inside the frame: small scale, central path.
    margin = 0.32
    lo_x, hi_x = margin * w, (1 - margin) * w
    lo_y, hi_y = margin * h, (1 - margin) * h
    start = (rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y))
    end = (rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y))
    az0 = rng.uniform(0.0, 360.0)
    sweep = rng.uniform(min_rotation, min_rotation + 90.0) * (1 if rng.uniform() < 0.5 else -1)
    scale = rng.uniform(0.55, 0.8)
    steps = [
        TrajectoryStep(
            center=(
                start[0] + (end[0] - start[0]) * t / (frames - 1),
                start[1] + (end[1] - start[1]) * t / (frames - 1),
            ),
            scale=scale,
            azimuth=(az0 + sweep * t / (frames - 1)) % 360.0,
        )
        for t in range(frames)
    ]

    occluder = None
    if rng.uniform() < occluder_prob:
        axis_len = w
        lo = int(rng.integers(2, max(3, axis_len - 5)))
        hi = min(axis_len - 2, lo + int(rng.integers(2, 4)))
        occluder = OccluderSpec(
            orientation="vertical",
            span=(lo, hi),
            color=tuple(rng.uniform(0.05, 0.3, size=3)),
            distance=1.6,
        )

    return SceneConfig(
        object=spec,
        background=bg,
        trajectory=steps,
        frame_size=frame_size,
        occluder=occluder,
        mesh_seed=mesh_seed,
    )


def generate_dataset(
    out_dir: Path,
    n_clips: int,
    frames: int = 9,
    frame_size: tuple[int, int] = (16, 16),
    n_views: int = 4,
    view_size: tuple[int, int] = (16, 16),
    seed: int = 0,
    min_rotation: float = 90.0,
    occluder_prob: float = 0.3,
) -> list[Path]:
    """Generate n_clips clip directories under out_dir; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(n_clips):
        clip_seed = seed + k
        rng = np.random.default_rng(clip_seed)
        # A drawn scene can fail validation (e.g. sprite clipped at the border);
        # retry with fresh draws from the same stream until one renders.
        for _ in range(64):
            scene = random_scene(
                rng,
                frame_size=frame_size,
                frames=frames,
                min_rotation=min_rotation,
                occluder_prob=occluder_prob,
            )
            try:
                clip, mesh, _, resolved = synth_clip(scene, rng)
                break
            except ValidationError:
                continue
        else:
            raise ValidationError(f"could not draw a valid scene for clip {k}")
        ref_distance, ref_fov = reference_camera(mesh)
        views = render_multiview(
            mesh,
            n_views,
            elevation=resolved.camera_elevation,
            distance=ref_distance,
            size=view_size,
            fov=ref_fov,
        )
        clip_dir = out_dir / f"clip_{k:05d}"
        save_clip_dir(clip_dir, clip, views, resolved, clip_seed)
        paths.append(clip_dir)
    return paths
