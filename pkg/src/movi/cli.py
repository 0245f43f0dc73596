"""Single `movi` entry point wiring data generation, training, sampling,
evaluation, ablation, and numeric verification.

Every run writes a `run.json` provenance record (seed, config hash, content
hashes of inputs) next to its outputs, sufficient to reproduce the artifacts
byte-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ValidationError

EXIT_OK = 0
EXIT_FAIL = 1


def _default_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("MOVI_SEED")
    return int(env) if env else 0


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _hash_path(path: Path) -> str:
    path = Path(path)
    if path.is_file():
        return _hash_bytes(path.read_bytes())
    digest = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            digest.update(str(p.relative_to(path)).encode())
            digest.update(_hash_bytes(p.read_bytes()).encode())
    return digest.hexdigest()


def write_run_record(out_dir: Path, command: str, seed: int, config: dict, inputs: dict[str, Path]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": _hash_bytes(json.dumps(config, sort_keys=True).encode()),
        "input_hashes": {name: _hash_path(p) for name, p in inputs.items() if Path(p).exists()},
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True))


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except Exception as exc:
        raise ValidationError(f"size must look like 16x16, got {text!r}") from exc
    return (h, w)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    from .synthworld.dataset import generate_dataset

    seed = _default_seed(args.seed)
    size = _parse_size(args.size)
    out = Path(args.out)
    generate_dataset(
        out,
        args.clips,
        frames=args.frames,
        frame_size=size,
        n_views=args.views,
        view_size=size,
        seed=seed,
        min_rotation=args.min_rotation,
        occluder_prob=args.occluder_prob,
    )
    config = {
        "clips": args.clips,
        "frames": args.frames,
        "size": list(size),
        "views": args.views,
        "min_rotation": args.min_rotation,
        "occluder_prob": args.occluder_prob,
    }
    write_run_record(out, "gen-data", seed, config, {})
    print(f"wrote {args.clips} clips to {out}")
    return EXIT_OK


def cmd_render_views(args: argparse.Namespace) -> int:
    from PIL import Image

    from .synthworld.mesh import MeshSpec, make_object
    from .synthworld.views import reference_camera, render_multiview

    seed = _default_seed(args.seed)
    size = _parse_size(args.size)
    if args.mesh_spec:
        spec = MeshSpec.from_dict(json.loads(Path(args.mesh_spec).read_text()))
    else:
        rng = np.random.default_rng(seed)
        spec = MeshSpec(shape="cuboid" if rng.uniform() < 0.5 else "uv_sphere")
    mesh = make_object(spec, seed)
    distance, fov = reference_camera(mesh)
    views = render_multiview(mesh, args.views, elevation=args.elevation, distance=distance, size=size, fov=fov)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(views.images):
        arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out / f"{i}.png")
    meta = {"azimuths": views.azimuths.tolist(), "mesh_spec": spec.to_dict(), "seed": seed}
    (out / "views.json").write_text(json.dumps(meta, indent=2))
    write_run_record(out, "render-views", seed, meta, {})
    print(f"wrote {views.n_views} views to {out}")
    return EXIT_OK


def _load_train_config(args: argparse.Namespace):
    from .trainer import TrainConfig

    if args.config:
        config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        config = TrainConfig()
    if getattr(args, "dataset", None):
        config.dataset_dir = args.dataset
    if getattr(args, "steps", None) is not None:
        config.steps = args.steps
    if getattr(args, "lr", None) is not None:
        config.lr = args.lr
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    elif os.environ.get("MOVI_SEED"):
        config.seed = int(os.environ["MOVI_SEED"])
    return config


def cmd_train(args: argparse.Namespace) -> int:
    from .trainer import save_checkpoint, train, write_log

    config = _load_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, resume_from=args.resume, out_dir=out)
    save_checkpoint(result.checkpoint, out / "checkpoint")
    write_log(result.log_rows, out / "log.csv")
    write_run_record(out, "train", config.seed, config.to_dict(), {"dataset": Path(config.dataset_dir)})
    last = result.log_rows[-1] if result.log_rows else {}
    print(f"trained {config.steps} steps; final loss_diff={last.get('loss_diff', 'n/a')}")
    print(f"checkpoint at {out / 'checkpoint'}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    from PIL import Image

    from .evaluate import generate_clip
    from .synthworld.dataset import ClipRecord
    from .synthworld.scene import SceneConfig, synth_clip
    from .synthworld.views import reference_camera, render_multiview
    from .synthworld.mesh import make_object
    from .trainer import load_checkpoint, prepare_clip
    from .conditioning import ToyEmbeddingProvider

    seed = _default_seed(args.seed)
    ckpt = load_checkpoint(Path(args.ckpt))
    scene_dict = json.loads(Path(args.scene).read_text())
    if "scene" in scene_dict:
        scene_dict = scene_dict["scene"]
    scene = SceneConfig.from_dict(scene_dict)
    clip, mesh, _, resolved = synth_clip(scene, np.random.default_rng(seed))
    distance, fov = reference_camera(mesh)
    views = render_multiview(
        mesh,
        ckpt.config.n_views,
        elevation=resolved.camera_elevation,
        distance=distance,
        size=tuple(ckpt.config.view_size),
        fov=fov,
    )
    record = ClipRecord(clip=clip, views=views, scene=resolved, seed=seed)
    provider = ToyEmbeddingProvider()
    prepared = prepare_clip(record, ckpt.config, provider)
    video = generate_clip(
        ckpt.bundle, prepared, ckpt.config, args.steps, seed, provider, mesh_cache={}
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(video.shape[0]):
        arr = np.clip(np.round(video[t] * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out / f"{t:04d}.png")
    write_run_record(
        out,
        "sample",
        seed,
        {"steps": args.steps, "scene": resolved.to_dict(), "ckpt_config": ckpt.config.to_dict()},
        {"ckpt": Path(args.ckpt), "scene_file": Path(args.scene)},
    )
    print(f"wrote {video.shape[0]} frames to {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .evalmetrics import report
    from .evaluate import evaluate_bundle
    from .trainer import load_checkpoint

    seed = _default_seed(args.seed)
    ckpt = load_checkpoint(Path(args.ckpt))
    metrics = evaluate_bundle(
        ckpt.bundle,
        ckpt.config,
        args.dataset,
        steps=args.steps,
        seed=seed,
        limit=args.clips,
    )
    if any(not np.isfinite(v) for v in metrics["means"].values()):
        print("error: NaN metric", file=sys.stderr)
        return EXIT_FAIL
    rows = [{"config": "eval", "seed": seed, **metrics["means"]}]
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    report(rows, out_csv=out_csv, out_json=out_csv.with_suffix(".json"))
    write_run_record(
        out_csv.parent,
        "eval",
        seed,
        {"steps": args.steps, "clips": args.clips},
        {"ckpt": Path(args.ckpt), "dataset": Path(args.dataset)},
    )
    print(json.dumps(metrics["means"], indent=2))
    return EXIT_OK


DEFAULT_ABLATION_ROWS: list[tuple[str, dict]] = [
    ("full", {}),
    ("wo_multi_view_prior", {"mvp": False}),
    ("wo_ipli", {"ipli": False}),
    ("wo_mvfb", {"mvfb": False, "scc": False}),
    ("wo_scc", {"scc": False}),
    ("wo_grounding", {"ch": False, "dh": False}),
    ("wo_tco", {"tco": False}),
]


def cmd_ablate(args: argparse.Namespace) -> int:
    from .evalmetrics import report
    from .trainer import TrainConfig, ablation_matrix

    cfg_dict = json.loads(Path(args.config).read_text())
    base = TrainConfig.from_dict(cfg_dict["train"])
    rows = [(r["name"], r.get("toggles", {})) for r in cfg_dict.get("rows", [])] or DEFAULT_ABLATION_ROWS
    seeds = list(range(args.seeds))
    results = ablation_matrix(
        base,
        rows,
        seeds,
        cfg_dict["eval_dataset_dir"],
        eval_steps=cfg_dict.get("eval_steps", 50),
        eval_clips=cfg_dict.get("eval_clips"),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = report(results, out_csv=out / "ablation.csv", out_json=out / "ablation.json")
    write_run_record(
        out,
        "ablate",
        args.seeds,
        cfg_dict,
        {"train_dataset": Path(base.dataset_dir), "eval_dataset": Path(cfg_dict["eval_dataset_dir"])},
    )
    for row in table:
        print(row)
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    from .checks import GRAD_TOL, grad_check_all

    seed = _default_seed(args.seed)
    if args.config:
        seed = json.loads(Path(args.config).read_text()).get("seed", seed)
    errors = grad_check_all(seed)
    ok = True
    for name, err in errors.items():
        status = "PASS" if err <= GRAD_TOL else "FAIL"
        ok &= err <= GRAD_TOL
        print(f"{name:24s} max_rel_err={err:.3e} {status}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_oracle_check(args: argparse.Namespace) -> int:
    from .checks import ORACLE_TOL, oracle_check_all

    seed = _default_seed(args.seed)
    errors = oracle_check_all(seed, instances=args.instances)
    ok = True
    for name, err in errors.items():
        status = "PASS" if err <= ORACLE_TOL else "FAIL"
        ok &= err <= ORACLE_TOL
        print(f"{name:24s} max_err={err:.3e} {status}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="movi", description="Multi-view object video insertion, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic clip dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--size", default="16x16")
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--min-rotation", type=float, default=90.0)
    p.add_argument("--occluder-prob", type=float, default=0.3)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("render-views", help="render a panoramic reference set")
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--size", default="16x16")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--elevation", type=float, default=15.0)
    p.add_argument("--mesh-spec", default=None, help="JSON MeshSpec file (default: seeded random)")
    p.set_defaults(func=cmd_render_views)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="TrainConfig JSON")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--dataset", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint dir to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a clip from a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True, help="SceneConfig JSON (or a clip meta.json)")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="report.csv")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--clips", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the toggle ablation matrix")
    p.add_argument("--config", required=True, help="JSON with train/eval_dataset_dir/rows")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("oracle-check", help="loop-oracle equivalence verification")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
