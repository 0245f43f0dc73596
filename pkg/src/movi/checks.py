"""Numeric verification suites: loop-oracle equivalence and gradient checks.

Both suites are callable from the CLI (`movi oracle-check`, `movi grad-check`)
and from the acceptance tests. Gradient checks run in float64 on a tiny model;
oracle checks compare the vectorized kernels against the explicit-loop
references in `oracles` on batches of random small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import oracles
from .backbone import ConditioningPack, ModelConfig, Toggles, diffusion_loss
from .conditioning import (
    FeatureBank,
    MVAttentionParams,
    identity_latent_inject,
    mv_cross_attention,
)
from .evalmetrics import SSIM_C1, SSIM_C2, box_iou, mask_iou, psnr, ssim
from .grounding import depth_loss, fpn_aggregate, seg_loss
from .latentcodec import LatentVideo, decode, encode, latent_from_tokens, tokens_from_latent
from .temporal import (
    bilinear_warp,
    estimate_flows,
    lk_flow,
    sobel_gradients,
    temporal_loss,
    temporal_loss_given_flows,
    to_gray,
)
from .trainer import ModelBundle

ORACLE_TOL = 1e-6
GRAD_TOL = 1e-4


def _err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    scale = np.maximum(1.0, np.abs(b))
    return float((diff / scale).max()) if diff.size else 0.0


# ---------------------------------------------------------------------------
# Oracle equivalence
# ---------------------------------------------------------------------------


def oracle_check_all(seed: int = 0, instances: int = 100) -> dict[str, float]:
    """Max abs/rel error per suite over `instances` random small cases."""
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}

    def record(name: str, err: float) -> None:
        errors[name] = max(errors.get(name, 0.0), err)

    for _ in range(instances):
        # mv cross-attention
        h = int(rng.choice([1, 2]))
        dh = int(rng.integers(2, 4))
        D = h * dh
        B, L = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        N, Lv = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = rng.normal(size=(B, L, D))
        keys = rng.normal(size=(N, Lv, D))
        values = rng.normal(size=(N, Lv, D))
        wq = rng.normal(size=(D, D))
        wo = rng.normal(size=(D, D))
        alpha = float(rng.uniform(0, 0.5))
        bank = FeatureBank(
            keys=torch.as_tensor(keys),
            values=torch.as_tensor(values),
            per_view_scores=torch.ones(N, dtype=torch.float64),
        )
        got = mv_cross_attention(
            torch.as_tensor(x),
            bank,
            alpha,
            h,
            MVAttentionParams(torch.as_tensor(wq), torch.as_tensor(wo)),
        ).numpy()
        record("mv_cross_attention", _err(got, oracles.attention_oracle(x, keys, values, alpha, h, wq, wo)))

        # losses
        shape = (int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        a = rng.normal(size=shape)
        b = rng.normal(size=shape)
        record("depth_loss", _err(float(depth_loss(torch.as_tensor(a), torch.as_tensor(b))), oracles.mean_abs_oracle(a, b)))
        record("seg_loss", _err(float(seg_loss(torch.as_tensor(a), torch.as_tensor(b))), oracles.mean_square_oracle(a, b)))

        # flow / warp / temporal
        hh, ww = int(rng.integers(4, 8)), int(rng.integers(4, 8))
        g0 = rng.uniform(size=(hh, ww))
        g1 = rng.uniform(size=(hh, ww))
        eps = 1e-6
        flow = lk_flow(torch.as_tensor(g0), torch.as_tensor(g1), eps)
        ou, ov = oracles.lk_flow_oracle(g0, g1, eps)
        record("lk_flow", max(_err(flow.u.numpy(), ou), _err(flow.v.numpy(), ov)))

        frame = rng.uniform(size=(hh, ww, 3))
        u = rng.uniform(-2, 2, size=(hh, ww))
        v = rng.uniform(-2, 2, size=(hh, ww))
        from .temporal import FlowField

        got_w = bilinear_warp(torch.as_tensor(frame), FlowField(torch.as_tensor(u), torch.as_tensor(v), eps)).numpy()
        record("bilinear_warp", _err(got_w, oracles.bilinear_warp_oracle(frame, u, v)))

        vid = rng.uniform(size=(int(rng.integers(2, 4)), hh, ww, 3))
        record("temporal_loss", _err(float(temporal_loss(torch.as_tensor(vid), eps)), oracles.temporal_loss_oracle(vid, eps)))
        from .evalmetrics import flicker_metric

        record("flicker", _err(flicker_metric(vid, eps), oracles.flicker_oracle(vid, eps)))

        # fpn
        n_tok, dim_in, dim_p = int(rng.integers(1, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        n_lvl = int(rng.integers(2, 5))
        levels = [rng.normal(size=(n_tok, dim_in)) for _ in range(n_lvl)]
        projs = [rng.normal(size=(dim_p, dim_in)) for _ in range(n_lvl)]
        fuse = rng.normal(size=(dim_p, dim_p))
        got_f = fpn_aggregate(
            [torch.as_tensor(l) for l in levels],
            [torch.as_tensor(p) for p in projs],
            torch.as_tensor(fuse),
        ).numpy()
        record("fpn_aggregate", _err(got_f, oracles.fpn_oracle(levels, projs, fuse)))

        # metrics
        va = rng.uniform(size=(2, 8, 8, 3))
        vb = rng.uniform(size=(2, 8, 8, 3))
        record("psnr", _err(psnr(va, vb), oracles.psnr_oracle(va, vb)))
        record("ssim", _err(ssim(va, vb, window=4), oracles.ssim_oracle(va, vb, 4, SSIM_C1, SSIM_C2)))
        ma = rng.integers(0, 2, size=(2, 6, 6))
        mb = rng.integers(0, 2, size=(2, 6, 6))
        record("mask_iou", _err(mask_iou(ma, mb), oracles.mask_iou_oracle(ma, mb)))
        boxes = []
        for _ in range(2):
            x0b, y0b = int(rng.integers(0, 4)), int(rng.integers(0, 4))
            boxes.append(
                [
                    (x0b, y0b, x0b + int(rng.integers(0, 3)), y0b + int(rng.integers(0, 3))),
                    (int(rng.integers(0, 4)), int(rng.integers(0, 4)), 5, 5),
                ]
            )
        pa = np.array([r[0] for r in boxes])
        pb = np.array([r[1] for r in boxes])
        record("box_iou", _err(box_iou(pa, pb), oracles.box_iou_oracle(pa, pb, (6, 6))))

        gray_in = rng.uniform(size=(hh, ww, 3))
        record("to_gray", _err(to_gray(torch.as_tensor(gray_in)).numpy(), oracles.gray_oracle(gray_in)))
        ix, iy, _ = sobel_gradients(torch.as_tensor(g0), torch.as_tensor(g1))
        ox, oy = oracles.sobel_oracle(g0)
        record("sobel", max(_err(ix.numpy(), ox), _err(iy.numpy(), oy)))

    # diffusion loss reduction against the loop MSE, on a tiny real model
    setup = tiny_setup(seed)
    for k in range(8):
        gen = torch.Generator()
        gen.manual_seed(seed + k)
        loss, info = diffusion_loss(setup.bundle.denoiser, setup.x0_tokens, setup.pack, gen)
        record(
            "diffusion_loss",
            _err(float(loss.detach()), oracles.mean_square_oracle(info["pred"].detach().numpy(), info["target"].numpy())),
        )
    return errors


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------


@dataclass
class TinySetup:
    bundle: ModelBundle
    x0_tokens: torch.Tensor
    pack: ConditioningPack
    gt_depth: torch.Tensor
    gt_seg: torch.Tensor
    toggles: Toggles
    view_tokens: torch.Tensor  # (N, L_v, C) raw latent tokens feeding the bank


def tiny_config() -> ModelConfig:
    return ModelConfig(
        d_model=16,
        n_heads=2,
        n_blocks=2,
        mlp_ratio=2,
        patch_size=2,
        max_tokens=64,
        time_embed_dim=8,
        fpn_dim=8,
        embed_dim=48,
    )


def tiny_setup(seed: int = 0, dtype: torch.dtype = torch.float64) -> TinySetup:
    """A fully wired miniature problem: T=2 4x4 video, 2 reference views."""
    cfg = tiny_config()
    torch.manual_seed(seed)
    bundle = ModelBundle(cfg).to(dtype)
    # The production head starts at zero; randomize it so gradients flow
    # through every block during the checks.
    nn.init.normal_(bundle.denoiser.out_head.weight, std=0.1)
    nn.init.normal_(bundle.denoiser.out_head.bias, std=0.1)

    rng = np.random.default_rng(seed)
    p = cfg.patch_size
    video = rng.uniform(size=(2, 4, 4, 3))
    bg = rng.uniform(size=(2, 4, 4, 3))
    ctrl = rng.integers(0, 2, size=(2, 4, 4, 1)).astype(np.float64)
    viewim = [rng.uniform(size=(1, 4, 4, 3)) for _ in range(2)]

    def lat(arr):
        enc = encode(arr, p)
        return LatentVideo(torch.as_tensor(np.asarray(enc.data), dtype=dtype), p, enc.source_shape)

    bg_lat, ctrl_lat = lat(bg), lat(ctrl[..., 0][..., None])
    view_lats = [lat(v) for v in viewim]
    cond, layout = identity_latent_inject(bg_lat, ctrl_lat, view_lats)

    from .conditioning import build_feature_bank

    wk, wv = bundle.denoiser.bank_projections()
    bank = build_feature_bank(view_lats, wk, wv)
    pack = ConditioningPack(
        cond_tokens=cond,
        layout=layout,
        bank=bank,
        alpha_ref=0.17,
        prompt_embedding=rng.normal(size=cfg.embed_dim) / np.sqrt(cfg.embed_dim),
    )
    x0 = tokens_from_latent(lat(video))
    gt_depth = torch.as_tensor(np.asarray(encode(rng.uniform(size=(2, 4, 4, 1)), p).data), dtype=dtype)
    gt_seg = torch.as_tensor(np.asarray(encode(ctrl, p).data), dtype=dtype)
    view_tokens = torch.stack([tokens_from_latent(v) for v in view_lats])
    return TinySetup(bundle, x0, pack, gt_depth, gt_seg, Toggles(), view_tokens)


def _rebuild_bank(setup: TinySetup) -> None:
    """Banks cache projected tokens; refresh so projection grads are live."""
    wk, wv = setup.bundle.denoiser.bank_projections()
    setup.pack.bank = FeatureBank(
        keys=setup.view_tokens @ wk.T,
        values=setup.view_tokens @ wv.T,
        per_view_scores=setup.pack.bank.per_view_scores,
    )


def _loss_functions(setup: TinySetup, seed: int) -> dict[str, callable]:
    """Closures recomputing each loss from scratch at the current parameters."""
    bundle = setup.bundle
    cfg = bundle.denoiser.cfg
    layout = setup.pack.layout

    # Fixed diffusion draw shared by the grounding/temporal paths.
    gen0 = torch.Generator()
    gen0.manual_seed(seed + 17)
    t_fix = torch.rand((), generator=gen0, dtype=torch.float64)
    eps_fix = torch.randn(setup.x0_tokens.shape, generator=gen0, dtype=torch.float64)
    x_t_fix = (1.0 - t_fix) * setup.x0_tokens + t_fix * eps_fix

    def forward_fixed():
        _rebuild_bank(setup)
        return bundle.denoiser(x_t_fix, t_fix, setup.pack, setup.toggles)

    def l_diff():
        _rebuild_bank(setup)
        gen = torch.Generator()
        gen.manual_seed(seed + 31)
        loss, _ = diffusion_loss(bundle.denoiser, setup.x0_tokens, setup.pack, gen, setup.toggles)
        return loss

    def l_depth():
        _, feats = forward_fixed()
        out = bundle.grounding(feats, layout.video_grid)
        return depth_loss(out.latent_depth, setup.gt_depth)

    def l_seg():
        _, feats = forward_fixed()
        out = bundle.grounding(feats, layout.video_grid)
        return seg_loss(out.latent_seg, setup.gt_seg)

    def decoded_estimate():
        pred, _ = forward_fixed()
        x0_hat = x_t_fix - t_fix * pred
        return decode(latent_from_tokens(x0_hat, layout.video_grid, cfg.patch_size, 3))

    with torch.no_grad():
        flows_fix = estimate_flows(decoded_estimate(), 1e-6)

    def l_temp():
        return temporal_loss_given_flows(decoded_estimate(), flows_fix)

    def l_total():
        return l_diff() + 1e-3 * l_depth() + 1e-3 * l_seg() + 5e-2 * l_temp()

    return {"L_diff": l_diff, "L_depth": l_depth, "L_seg": l_seg, "L_temp": l_temp, "L_total": l_total}


def _grad_error_for_params(loss_fn, params: dict[str, torch.Tensor], rng: np.random.Generator, entries: int = 2, h: float = 1e-5) -> float:
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    worst = 0.0
    for (name, p), g in zip(params.items(), grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.detach().view(-1)
        n = flat.numel()
        idxs = rng.choice(n, size=min(entries, n), replace=False)
        for idx in idxs:
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + h
            plus = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = orig - h
            minus = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = orig
            fd = (plus - minus) / (2 * h)
            an = float(g.reshape(-1)[idx])
            denom = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / denom)
    return worst


def grad_check_losses(seed: int = 0, entries: int = 2) -> dict[str, float]:
    """Max relative FD error per loss over every named parameter group."""
    setup = tiny_setup(seed)
    losses = _loss_functions(setup, seed)
    params = dict(setup.bundle.named_parameters())
    rng = np.random.default_rng(seed + 1)
    return {name: _grad_error_for_params(fn, params, rng, entries=entries) for name, fn in losses.items()}


def grad_check_mv_attention(seed: int = 0) -> float:
    """Dense FD check of the attention update w.r.t. x, bank, and projections."""
    rng = np.random.default_rng(seed)
    B, L, D, h = 1, 3, 4, 2
    N, Lv = 2, 2
    leaves = {
        "x": torch.as_tensor(rng.normal(size=(B, L, D))).requires_grad_(True),
        "keys": torch.as_tensor(rng.normal(size=(N, Lv, D))).requires_grad_(True),
        "values": torch.as_tensor(rng.normal(size=(N, Lv, D))).requires_grad_(True),
        "wq": torch.as_tensor(rng.normal(size=(D, D))).requires_grad_(True),
        "wo": torch.as_tensor(rng.normal(size=(D, D))).requires_grad_(True),
    }
    weight = torch.as_tensor(rng.normal(size=(B, L, D)))

    def loss_fn():
        bank = FeatureBank(leaves["keys"], leaves["values"], torch.ones(N, dtype=torch.float64))
        out = mv_cross_attention(
            leaves["x"], bank, 0.3, h, MVAttentionParams(leaves["wq"], leaves["wo"])
        )
        return (out * weight).sum()

    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(leaves.values()))
    worst = 0.0
    hstep = 1e-6
    for (name, tensor), g in zip(leaves.items(), grads):
        flat = tensor.detach().reshape(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + hstep
            plus = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = orig - hstep
            minus = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = orig
            fd = (plus - minus) / (2 * hstep)
            an = float(g.reshape(-1)[idx])
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


def grad_check_temporal_frames(seed: int = 0) -> float:
    """FD check of the temporal loss w.r.t. video pixels, flow held constant."""
    rng = np.random.default_rng(seed)
    video = torch.as_tensor(rng.uniform(size=(3, 5, 5, 3))).requires_grad_(True)
    flows = estimate_flows(video.detach(), 1e-6)

    def loss_fn():
        return temporal_loss_given_flows(video, flows)

    loss = loss_fn()
    (grad,) = torch.autograd.grad(loss, video)
    worst = 0.0
    h = 1e-6
    flat = video.detach().reshape(-1)
    idxs = rng.choice(flat.numel(), size=60, replace=False)
    for idx in idxs:
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + h
        plus = float(loss_fn().detach())
        with torch.no_grad():
            flat[idx] = orig - h
        minus = float(loss_fn().detach())
        with torch.no_grad():
            flat[idx] = orig
        fd = (plus - minus) / (2 * h)
        an = float(grad.reshape(-1)[idx])
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


def grad_check_all(seed: int = 0) -> dict[str, float]:
    out = grad_check_losses(seed)
    out["mv_cross_attention"] = grad_check_mv_attention(seed)
    out["temporal_frames"] = grad_check_temporal_frames(seed)
    return out
