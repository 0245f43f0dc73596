"""End-to-end training over the synthetic dataset with component toggles.

One training step: sample a clip, pick its reference frame, assemble the
(possibly corrupted) reference set, score it against the prompt, build the
conditioning pack, evaluate the weighted loss, and take an Adam step. All
randomness flows through two explicit generators (numpy for data decisions,
torch for noise), so runs are reproducible and resumable bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import (
    ConditioningPack,
    Denoiser,
    ModelConfig,
    Toggles,
    diffusion_loss,
)
from .conditioning import (
    ConsistencyReport,
    ToyEmbeddingProvider,
    build_feature_bank,
    consistency_scores,
    identity_latent_inject,
    modulate_scale,
    scale_bank,
)
from .errors import ValidationError
from .grounding import GroundingHeads, depth_loss, seg_loss
from .latentcodec import encode, encode_scalar_map, latent_from_tokens, decode, rasterize_box_signal, tokens_from_latent, LatentVideo
from .synthworld.dataset import ClipRecord, list_clip_dirs, load_clip_dir
from .synthworld.mesh import make_object
from .synthworld.scene import select_reference_frame
from .synthworld.views import (
    CorruptionConfig,
    MultiViewReferenceSet,
    corrupt_views,
    reference_camera,
    render_multiview,
    render_single_view,
)
from .temporal import temporal_loss, total_loss

LOG_COLUMNS = ["step", "loss_diff", "loss_depth", "loss_seg", "loss_temp", "alpha_ref"]


@dataclass
class TrainConfig:
    dataset_dir: str = "data"
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    toggles: Toggles = field(default_factory=Toggles)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    lambda_d: float = 1e-3
    lambda_s: float = 1e-3
    lambda_t: float = 5e-2
    alpha0: float = 0.2
    tau: float = 1.0
    n_views: int = 4
    control_mode: str = "mask"  # "mask" | "bbox"
    view_size: tuple[int, int] = (16, 16)
    epsilon_flow: float = 1e-6
    weight_decay: float = 0.0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValidationError("learning rate must be > 0")
        if self.steps < 0 or self.batch_size < 1 or self.n_views < 1:
            raise ValidationError("steps, batch_size, and n_views must be positive")
        if self.control_mode not in ("mask", "bbox"):
            raise ValidationError("control_mode must be 'mask' or 'bbox'")
        if self.alpha0 < 0 or self.tau <= 0 or self.epsilon_flow <= 0:
            raise ValidationError("alpha0 >= 0, tau > 0, epsilon_flow > 0 required")
        self.model.validate()
        self.toggles.validate()
        self.corruption.validate()

    def to_dict(self) -> dict:
        return {
            "dataset_dir": self.dataset_dir,
            "steps": self.steps,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "toggles": self.toggles.to_dict(),
            "corruption": self.corruption.to_dict(),
            "lambda_d": self.lambda_d,
            "lambda_s": self.lambda_s,
            "lambda_t": self.lambda_t,
            "alpha0": self.alpha0,
            "tau": self.tau,
            "n_views": self.n_views,
            "control_mode": self.control_mode,
            "view_size": list(self.view_size),
            "epsilon_flow": self.epsilon_flow,
            "weight_decay": self.weight_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        d["toggles"] = Toggles.from_dict(d.get("toggles", Toggles().to_dict()))
        d["corruption"] = CorruptionConfig.from_dict(d.get("corruption", CorruptionConfig().to_dict()))
        d["view_size"] = tuple(d.get("view_size", (16, 16)))
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class ModelBundle(nn.Module):
    """Denoiser plus grounding heads, checkpointed as one named-array set."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.denoiser = Denoiser(cfg)
        self.grounding = GroundingHeads(cfg)


@dataclass
class PreparedClip:
    """Per-clip tensors that do not change across steps."""

    record: ClipRecord
    x0_tokens: torch.Tensor
    bg_latent: LatentVideo
    ctrl_latent: LatentVideo
    gt_depth: torch.Tensor
    gt_seg: torch.Tensor
    prompt_embedding: np.ndarray
    ref_azimuth: float


def _to_f32(latent: LatentVideo) -> LatentVideo:
    return LatentVideo(
        data=torch.as_tensor(np.asarray(latent.data, dtype=np.float32)),
        patch_size=latent.patch_size,
        source_shape=latent.source_shape,
    )


def prepare_clip(record: ClipRecord, config: TrainConfig, provider) -> PreparedClip:
    p = config.model.patch_size
    clip = record.clip
    x0 = _to_f32(encode(clip.frames, p))
    # The insertion target's surroundings: clean background video.
    from .synthworld.scene import clean_background_video

    bg_latent = _to_f32(encode(clean_background_video(record.scene), p))
    if config.control_mode == "mask":
        signal = clip.masks.astype(np.float64)
    else:
        signal = rasterize_box_signal(clip.boxes, clip.frames.shape[1:3])
    ctrl_latent = _to_f32(encode_scalar_map(signal, p))
    gt_depth = torch.as_tensor(np.asarray(encode_scalar_map(clip.depth, p).data, dtype=np.float32))
    gt_seg = torch.as_tensor(np.asarray(encode_scalar_map(clip.masks.astype(np.float64), p).data, dtype=np.float32))
    ref_idx = select_reference_frame(clip)
    return PreparedClip(
        record=record,
        x0_tokens=tokens_from_latent(x0),
        bg_latent=bg_latent,
        ctrl_latent=ctrl_latent,
        gt_depth=gt_depth,
        gt_seg=gt_seg,
        prompt_embedding=provider.embed_text(clip.prompt),
        ref_azimuth=record.scene.trajectory[ref_idx].azimuth,
    )


def reference_views(
    prepared: PreparedClip, config: TrainConfig, mesh_cache: dict
) -> MultiViewReferenceSet:
    """The clean reference set for a clip under the current toggles."""
    record = prepared.record
    scene = record.scene
    key = id(record)
    if key not in mesh_cache:
        mesh_cache[key] = make_object(scene.object, scene.mesh_seed)
    mesh = mesh_cache[key]
    distance, fov = reference_camera(mesh)
    if config.toggles.mvp:
        if record.views.n_views == config.n_views and record.views.images.shape[1:3] == tuple(config.view_size):
            return record.views
        return render_multiview(
            mesh,
            config.n_views,
            elevation=scene.camera_elevation,
            distance=distance,
            size=config.view_size,
            fov=fov,
        )
    return render_single_view(
        mesh,
        prepared.ref_azimuth,
        elevation=scene.camera_elevation,
        distance=distance,
        size=config.view_size,
        fov=fov,
    )


def assemble_pack(
    prepared: PreparedClip,
    views: MultiViewReferenceSet,
    bundle: ModelBundle,
    config: TrainConfig,
    provider,
) -> tuple[ConditioningPack, ConsistencyReport]:
    """Score views, build the (scaled) bank, and fuse the conditioning tokens."""
    toggles = config.toggles
    if toggles.scc:
        view_embs = np.stack([provider.embed_image(img) for img in views.images])
        report = consistency_scores(prepared.prompt_embedding, view_embs, config.tau)
    else:
        report = ConsistencyReport.all_ones(views.n_views)
    alpha_ref = modulate_scale(config.alpha0, report.mean_score)

    p = config.model.patch_size
    view_latents = [_to_f32(encode(img[None], p)) for img in views.images]
    bank = None
    if toggles.mvfb:
        wk, wv = bundle.denoiser.bank_projections()
        bank = build_feature_bank(view_latents, wk, wv)
        if toggles.scc:
            bank = scale_bank(bank, report)
    cond, layout = identity_latent_inject(
        prepared.bg_latent, prepared.ctrl_latent, view_latents if toggles.ipli else []
    )
    pack = ConditioningPack(
        cond_tokens=cond,
        layout=layout,
        bank=bank,
        alpha_ref=alpha_ref,
        prompt_embedding=prepared.prompt_embedding,
    )
    return pack, report


@dataclass
class StepLosses:
    loss_diff: float
    loss_depth: float
    loss_seg: float
    loss_temp: float
    alpha_ref: float


def compute_losses(
    bundle: ModelBundle,
    prepared: PreparedClip,
    pack: ConditioningPack,
    config: TrainConfig,
    generator: torch.Generator,
) -> tuple[torch.Tensor, StepLosses]:
    toggles = config.toggles
    l_diff, info = diffusion_loss(bundle.denoiser, prepared.x0_tokens, pack, generator, toggles)

    l_depth = l_seg = None
    if toggles.dh or toggles.ch:
        grounding = bundle.grounding(info["features"], pack.layout.video_grid)
        if toggles.dh:
            l_depth = depth_loss(grounding.latent_depth, prepared.gt_depth)
        if toggles.ch:
            l_seg = seg_loss(grounding.latent_seg, prepared.gt_seg)

    l_temp = None
    if toggles.tco:
        # The clean estimate from the current prediction: x0_hat = x_t - t * v.
        x0_hat = info["x_t"] - info["t"] * info["pred"]
        latent = latent_from_tokens(x0_hat, pack.layout.video_grid, config.model.patch_size, 3)
        video_est = decode(latent)
        l_temp = temporal_loss(video_est, config.epsilon_flow)

    total = total_loss(
        l_diff,
        l_depth,
        l_seg,
        l_temp,
        lambda_d=config.lambda_d,
        lambda_s=config.lambda_s,
        lambda_t=config.lambda_t,
        dh=toggles.dh,
        ch=toggles.ch,
        tco=toggles.tco,
    )
    logged = StepLosses(
        loss_diff=float(l_diff.detach()),
        loss_depth=float(l_depth.detach()) if l_depth is not None else 0.0,
        loss_seg=float(l_seg.detach()) if l_seg is not None else 0.0,
        loss_temp=float(l_temp.detach()) if l_temp is not None else 0.0,
        alpha_ref=pack.alpha_ref,
    )
    return total, logged


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    bundle: ModelBundle
    optimizer: torch.optim.Adam
    config: TrainConfig
    step: int
    torch_rng: torch.Tensor
    np_rng_state: dict


def save_checkpoint(ckpt: Checkpoint, path: Path) -> None:
    """Write params.npz (named arrays) + manifest.json under `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in ckpt.bundle.state_dict().items():
        arrays[f"model/{name}"] = tensor.detach().cpu().numpy()
    opt_state = ckpt.optimizer.state_dict()
    for pid, state in opt_state["state"].items():
        for key, val in state.items():
            if torch.is_tensor(val):
                arrays[f"optim/{pid}/{key}"] = val.detach().cpu().numpy()
            else:
                arrays[f"optim/{pid}/{key}"] = np.asarray(val)
    arrays["rng/torch"] = ckpt.torch_rng.numpy()

    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name]).tobytes())

    manifest = {
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config.config_hash(),
        "step": ckpt.step,
        "toggles": ckpt.config.toggles.to_dict(),
        "np_rng_state": ckpt.np_rng_state,
        "optim_param_groups": [
            {k: v for k, v in g.items() if k != "params"} for g in opt_state["param_groups"]
        ],
        "arrays": {
            name: {"shape": list(a.shape), "dtype": str(a.dtype)} for name, a in arrays.items()
        },
        "content_hash": digest.hexdigest(),
    }
    np.savez(path / "params.npz", **arrays)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / "manifest.json"
    params_path = path / "params.npz"
    if not manifest_path.exists() or not params_path.exists():
        raise ValidationError(f"checkpoint incomplete at {path}")
    manifest = json.loads(manifest_path.read_text())
    with np.load(params_path) as npz:
        arrays = {name: npz[name] for name in npz.files}

    declared = manifest["arrays"]
    if set(declared) != set(arrays):
        raise ValidationError("checkpoint array names do not match the manifest")
    for name, meta in declared.items():
        if list(arrays[name].shape) != meta["shape"] or str(arrays[name].dtype) != meta["dtype"]:
            raise ValidationError(f"array {name} does not match the manifest")
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name]).tobytes())
    if digest.hexdigest() != manifest["content_hash"]:
        raise ValidationError("checkpoint content hash mismatch")

    config = TrainConfig.from_dict(manifest["config"])
    if config.config_hash() != manifest["config_hash"]:
        raise ValidationError("checkpoint config hash mismatch")

    bundle = ModelBundle(config.model)
    state = {
        name[len("model/") :]: torch.as_tensor(a)
        for name, a in arrays.items()
        if name.startswith("model/")
    }
    bundle.load_state_dict(state)

    optimizer = torch.optim.Adam(
        bundle.parameters(),
        lr=config.lr,
        betas=(0.9, 0.999),
        weight_decay=config.weight_decay,
    )
    opt_state: dict = {"state": {}, "param_groups": []}
    n_params = len(list(bundle.parameters()))
    for pid in range(n_params):
        entries = {
            key.split("/")[-1]: torch.as_tensor(a)
            for key, a in arrays.items()
            if key.startswith(f"optim/{pid}/")
        }
        if entries:
            opt_state["state"][pid] = entries
    for group_meta in manifest["optim_param_groups"]:
        group = dict(group_meta)
        group["params"] = list(range(n_params))
        opt_state["param_groups"].append(group)
    if opt_state["state"]:
        optimizer.load_state_dict(opt_state)

    return Checkpoint(
        bundle=bundle,
        optimizer=optimizer,
        config=config,
        step=manifest["step"],
        torch_rng=torch.as_tensor(arrays["rng/torch"]),
        np_rng_state=manifest["np_rng_state"],
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log_rows: list[dict]


def load_dataset(config: TrainConfig, provider, limit: int | None = None) -> list[PreparedClip]:
    dirs = list_clip_dirs(Path(config.dataset_dir))
    if not dirs:
        raise ValidationError(f"no clips found under {config.dataset_dir}")
    if limit is not None:
        dirs = dirs[:limit]
    return [prepare_clip(load_clip_dir(d), config, provider) for d in dirs]


def train(
    config: TrainConfig,
    provider=None,
    resume_from: Path | None = None,
    out_dir: Path | None = None,
    dataset: list[PreparedClip] | None = None,
) -> TrainResult:
    """Run the training loop; returns the final checkpoint and per-step log."""
    config.validate()
    provider = provider if provider is not None else ToyEmbeddingProvider()
    prepared = dataset if dataset is not None else load_dataset(config, provider)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config.config_hash() != config.config_hash():
            raise ValidationError("resume config differs from the checkpoint config")
        bundle = ckpt.bundle
        optimizer = ckpt.optimizer
        generator = torch.Generator()
        generator.set_state(ckpt.torch_rng.to(torch.uint8))
        np_rng = np.random.default_rng()
        np_rng.bit_generator.state = ckpt.np_rng_state
        start_step = ckpt.step
    else:
        torch.manual_seed(config.seed)
        bundle = ModelBundle(config.model)
        optimizer = torch.optim.Adam(
            bundle.parameters(),
            lr=config.lr,
            betas=(0.9, 0.999),
            weight_decay=config.weight_decay,
        )
        generator = torch.Generator()
        generator.manual_seed(config.seed + 1)
        np_rng = np.random.default_rng(config.seed + 2)
        start_step = 0

    mesh_cache: dict = {}
    corrupt_enabled = config.toggles.mvp and (
        config.corruption.p_blur > 0 or config.corruption.p_warp > 0 or config.corruption.p_hole > 0
    )

    rows = []
    for step in range(start_step, config.steps):
        optimizer.zero_grad()
        logged = None
        for _ in range(config.batch_size):
            clip = prepared[int(np_rng.integers(0, len(prepared)))]
            views = reference_views(clip, config, mesh_cache)
            if corrupt_enabled:
                views = corrupt_views(views, config.corruption, np_rng)
            pack, _ = assemble_pack(clip, views, bundle, config, provider)
            loss, logged = compute_losses(bundle, clip, pack, config, generator)
            if not torch.isfinite(loss):
                dump = {
                    "step": step,
                    "losses": logged.__dict__,
                    "config": config.to_dict(),
                }
                dump_path = Path(out_dir or ".") / "nan_dump.json"
                dump_path.write_text(json.dumps(dump, indent=2))
                raise RuntimeError(f"non-finite loss at step {step}; dump at {dump_path}")
            (loss / config.batch_size).backward()
        optimizer.step()
        rows.append(
            {
                "step": step,
                "loss_diff": logged.loss_diff,
                "loss_depth": logged.loss_depth,
                "loss_seg": logged.loss_seg,
                "loss_temp": logged.loss_temp,
                "alpha_ref": logged.alpha_ref,
            }
        )

    ckpt = Checkpoint(
        bundle=bundle,
        optimizer=optimizer,
        config=config,
        step=config.steps,
        torch_rng=generator.get_state(),
        np_rng_state=np_rng.bit_generator.state,
    )
    return TrainResult(checkpoint=ckpt, log_rows=rows)


def write_log(rows: list[dict], path: Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_COLUMNS})


def ablation_matrix(
    base_config: TrainConfig,
    rows: list[tuple[str, dict]],
    seeds: list[int],
    eval_dataset_dir: str,
    eval_steps: int = 50,
    eval_clips: int | None = None,
    provider=None,
) -> list[dict]:
    """Train and evaluate one run per (row, seed); returns raw result rows."""
    from .evaluate import evaluate_bundle

    provider = provider if provider is not None else ToyEmbeddingProvider()
    results = []
    for name, overrides in rows:
        toggles = Toggles.from_dict({**base_config.toggles.to_dict(), **overrides})
        for seed in seeds:
            cfg = replace(base_config, toggles=toggles, seed=seed)
            cfg.validate()
            result = train(cfg, provider=provider)
            metrics = evaluate_bundle(
                result.checkpoint.bundle,
                cfg,
                eval_dataset_dir,
                steps=eval_steps,
                seed=seed,
                provider=provider,
                limit=eval_clips,
            )
            results.append({"config": name, "seed": seed, **metrics["means"]})
    return results
