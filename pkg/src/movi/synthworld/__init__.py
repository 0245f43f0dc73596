from .mesh import MeshSpec, TriMesh, make_object
from .camera import CameraPose
from .raster import render_view
from .views import (
    CorruptionConfig,
    MultiViewReferenceSet,
    corrupt_views,
    render_multiview,
    render_single_view,
)
from .scene import (
    BackgroundSpec,
    OccluderSpec,
    SceneConfig,
    TrajectoryStep,
    VideoClip,
    select_reference_frame,
    synth_clip,
)
from .prompts import make_prompt, color_name_to_rgb, sample_palette
from .dataset import generate_dataset, list_clip_dirs, load_clip_dir, save_clip_dir

__all__ = [
    "MeshSpec",
    "TriMesh",
    "make_object",
    "CameraPose",
    "render_view",
    "CorruptionConfig",
    "MultiViewReferenceSet",
    "corrupt_views",
    "render_multiview",
    "render_single_view",
    "BackgroundSpec",
    "OccluderSpec",
    "SceneConfig",
    "TrajectoryStep",
    "VideoClip",
    "select_reference_frame",
    "synth_clip",
    "make_prompt",
    "color_name_to_rgb",
    "sample_palette",
    "generate_dataset",
    "list_clip_dirs",
    "load_clip_dir",
    "save_clip_dir",
]
