"""Generation + metric evaluation of a trained model over held-out clips."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .backbone import sample
from .evalmetrics import (
    boxes_from_masks,
    extract_object_mask,
    flicker_metric,
    mask_iou,
    box_iou,
    psnr,
    ssim,
)
from .latentcodec import decode, rasterize_box_signal
from .synthworld.scene import clean_background_video
from .synthworld.views import CorruptionConfig, corrupt_views
from .trainer import (
    ModelBundle,
    PreparedClip,
    TrainConfig,
    assemble_pack,
    load_dataset,
    reference_views,
)

MASK_THRESHOLD = 0.05


def generate_clip(
    bundle: ModelBundle,
    prepared: PreparedClip,
    config: TrainConfig,
    steps: int,
    seed: int,
    provider,
    mesh_cache: dict,
    corruption: CorruptionConfig | None = None,
    corruption_seed: int = 0,
) -> np.ndarray:
    """Sample one clip; returns the decoded (T, H, W, 3) video clipped to [0, 1]."""
    views = reference_views(prepared, config, mesh_cache)
    if corruption is not None:
        views = corrupt_views(views, corruption, np.random.default_rng(corruption_seed))
    pack, _ = assemble_pack(prepared, views, bundle, config, provider)
    gen = torch.Generator()
    gen.manual_seed(seed)
    latent = sample(bundle.denoiser, pack, steps=steps, generator=gen, toggles=config.toggles)
    video = decode(latent).detach().cpu().numpy()
    return np.clip(video, 0.0, 1.0)


def evaluate_prepared(
    bundle: ModelBundle,
    prepared_clips: list[PreparedClip],
    config: TrainConfig,
    steps: int = 50,
    seed: int = 0,
    provider=None,
    corruption: CorruptionConfig | None = None,
) -> dict:
    """Metrics per clip plus means: PSNR/SSIM against the ground-truth clip,
    IoU against the guidance signal, and the flicker proxy on the generation."""
    from .conditioning import ToyEmbeddingProvider

    provider = provider if provider is not None else ToyEmbeddingProvider()
    mesh_cache: dict = {}
    per_clip = {"psnr": [], "ssim": [], "m_iou": [], "b_iou": [], "flicker": []}
    for k, prepared in enumerate(prepared_clips):
        video = generate_clip(
            bundle,
            prepared,
            config,
            steps,
            seed * 100003 + k,
            provider,
            mesh_cache,
            corruption=corruption,
            corruption_seed=seed * 77 + k,
        )
        clip = prepared.record.clip
        bg = clean_background_video(prepared.record.scene)
        if config.control_mode == "mask":
            guidance_mask = clip.masks.astype(bool)
        else:
            guidance_mask = rasterize_box_signal(clip.boxes, clip.frames.shape[1:3]).astype(bool)
        pred_mask = extract_object_mask(video, bg, MASK_THRESHOLD)
        per_clip["psnr"].append(psnr(video, clip.frames))
        per_clip["ssim"].append(ssim(video, clip.frames))
        per_clip["m_iou"].append(mask_iou(pred_mask, guidance_mask))
        per_clip["b_iou"].append(box_iou(boxes_from_masks(pred_mask), boxes_from_masks(guidance_mask)))
        per_clip["flicker"].append(flicker_metric(video))
    means = {m: float(np.mean(v)) for m, v in per_clip.items()}
    return {"per_clip": per_clip, "means": means}


def evaluate_bundle(
    bundle: ModelBundle,
    config: TrainConfig,
    dataset_dir: str | Path,
    steps: int = 50,
    seed: int = 0,
    provider=None,
    limit: int | None = None,
    corruption: CorruptionConfig | None = None,
) -> dict:
    from .conditioning import ToyEmbeddingProvider
    from dataclasses import replace

    provider = provider if provider is not None else ToyEmbeddingProvider()
    eval_config = replace(config, dataset_dir=str(dataset_dir))
    prepared = load_dataset(eval_config, provider, limit=limit)
    return evaluate_prepared(
        bundle, prepared, eval_config, steps=steps, seed=seed, provider=provider, corruption=corruption
    )
