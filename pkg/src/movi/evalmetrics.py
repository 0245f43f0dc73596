"""Reconstruction, controllability, and smoothness metrics plus reporting.

The flicker proxy (1 - mean warped residual) stands in for perceptual
temporal-flickering scores; it is only meaningful for comparing runs of this
codebase, not against numbers produced by pretrained-network metrics.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .temporal import GRAY_WEIGHTS, bilinear_warp, lk_flow, to_gray

PSNR_CAP = 99.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

METRIC_COLUMNS = ["psnr", "ssim", "m_iou", "b_iou", "flicker"]


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE) for [0,1] videos, capped at 99 dB (identical inputs).

    With a mask, the MSE is taken over masked pixels only (all channels).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("psnr inputs must share a shape")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[:-1]:
            raise ValidationError("mask must match the frame grid")
        if not m.any():
            raise ValidationError("mask selects no pixels")
        mse = float(((a - b) ** 2)[m].mean())
    else:
        mse = float(((a - b) ** 2).mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gray_frames(video: np.ndarray) -> np.ndarray:
    w = np.asarray(GRAY_WEIGHTS)
    return video @ w


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8) -> float:
    """Mean SSIM over sliding windows of grayscale frames.

    Uniform windows, population moments, c1 = 0.01^2, c2 = 0.03^2 for a unit
    dynamic range.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("ssim inputs must share a shape")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if a.shape[1] < window or a.shape[2] < window:
        raise ValidationError("frames smaller than the ssim window")
    ga = _gray_frames(a)
    gb = _gray_frames(b)
    vals = []
    for t in range(ga.shape[0]):
        wa = sliding_window_view(ga[t], (window, window))
        wb = sliding_window_view(gb[t], (window, window))
        mu_a = wa.mean(axis=(-1, -2))
        mu_b = wb.mean(axis=(-1, -2))
        var_a = (wa**2).mean(axis=(-1, -2)) - mu_a**2
        var_b = (wb**2).mean(axis=(-1, -2)) - mu_b**2
        cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
            (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        )
        vals.append(s.mean())
    return float(np.mean(vals))


def extract_object_mask(
    generated: np.ndarray, clean_background: np.ndarray, threshold: float = 0.05
) -> np.ndarray:
    """Background differencing followed by a 3x3 majority filter.

    A pixel is foreground when the max-channel absolute difference exceeds the
    threshold; the majority filter (>= 5 of the 3x3 zero-padded neighborhood)
    removes speckle.
    """
    g = np.asarray(generated, dtype=np.float64)
    c = np.asarray(clean_background, dtype=np.float64)
    if g.shape != c.shape:
        raise ValidationError("generated and background shapes differ")
    raw = (np.abs(g - c).max(axis=-1) > threshold).astype(np.uint8)
    padded = np.pad(raw, ((0, 0), (1, 1), (1, 1)))
    counts = sum(
        padded[:, dy : dy + raw.shape[1], dx : dx + raw.shape[2]]
        for dy in range(3)
        for dx in range(3)
    )
    return (counts >= 5).astype(np.uint8)


def mask_iou(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """Intersection over union, averaged over frames.

    Frames where both masks are empty count as IoU 1.
    """
    p = np.asarray(pred_mask).astype(bool)
    g = np.asarray(gt_mask).astype(bool)
    if p.shape != g.shape:
        raise ValidationError("mask shapes differ")
    if p.ndim == 2:
        p, g = p[None], g[None]
    vals = []
    for t in range(p.shape[0]):
        union = (p[t] | g[t]).sum()
        if union == 0:
            vals.append(1.0)
        else:
            vals.append((p[t] & g[t]).sum() / union)
    return float(np.mean(vals))


EMPTY_BOX = (-1, -1, -1, -1)


def boxes_from_masks(masks: np.ndarray) -> np.ndarray:
    """Tight inclusive boxes per frame; EMPTY_BOX sentinel for empty masks."""
    masks = np.asarray(masks).astype(bool)
    out = np.empty((len(masks), 4), dtype=np.int64)
    for t, m in enumerate(masks):
        ys, xs = np.nonzero(m)
        out[t] = EMPTY_BOX if len(ys) == 0 else (xs.min(), ys.min(), xs.max(), ys.max())
    return out


def _box_area(box: np.ndarray) -> int:
    if tuple(box) == EMPTY_BOX:
        return 0
    return int((box[2] - box[0] + 1) * (box[3] - box[1] + 1))


def box_iou(pred_boxes: np.ndarray, gt_boxes: np.ndarray) -> float:
    """Inclusive-pixel box IoU averaged over frames; empty-vs-empty counts 1."""
    p = np.asarray(pred_boxes, dtype=np.int64)
    g = np.asarray(gt_boxes, dtype=np.int64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 4:
        raise ValidationError("boxes must be matching (T, 4) arrays")
    vals = []
    for bp, bg in zip(p, g):
        ap, ag = _box_area(bp), _box_area(bg)
        if ap == 0 and ag == 0:
            vals.append(1.0)
            continue
        if ap == 0 or ag == 0:
            vals.append(0.0)
            continue
        ix = min(bp[2], bg[2]) - max(bp[0], bg[0]) + 1
        iy = min(bp[3], bg[3]) - max(bp[1], bg[1]) + 1
        inter = max(ix, 0) * max(iy, 0)
        vals.append(inter / (ap + ag - inter))
    return float(np.mean(vals))


def flicker_metric(video: np.ndarray, epsilon: float = 1e-6) -> float:
    """1 - mean absolute warped inter-frame residual; 1.0 for static videos."""
    vid = np.asarray(video, dtype=np.float64)
    if vid.ndim != 4 or vid.shape[0] < 2:
        raise ValidationError("flicker metric needs a (T>=2, H, W, 3) video")
    import torch

    tv = torch.as_tensor(vid)
    gray = to_gray(tv)
    residuals = []
    for t in range(vid.shape[0] - 1):
        flow = lk_flow(gray[t], gray[t + 1], epsilon)
        warped = bilinear_warp(tv[t], flow)
        residuals.append(float((warped - tv[t + 1]).abs().mean()))
    return 1.0 - float(np.mean(residuals))


def report(rows: list[dict], out_csv: Path | None = None, out_json: Path | None = None) -> list[dict]:
    """Build the result table with per-config mean +/- std rows appended.

    Each row needs 'config' and 'seed'; metric cells default to 'n/a'.
    Returns the full table (raw rows + aggregates) in stable column order.
    """
    columns = ["config", "seed"] + METRIC_COLUMNS
    table = []
    for row in rows:
        table.append({c: row.get(c, "n/a") for c in columns})

    by_config: dict[str, list[dict]] = {}
    for row in table:
        by_config.setdefault(row["config"], []).append(row)
    for config, group in by_config.items():
        agg = {"config": config, "seed": "mean±std"}
        for m in METRIC_COLUMNS:
            vals = [r[m] for r in group if isinstance(r[m], (int, float))]
            if not vals:
                agg[m] = "n/a"
            else:
                agg[m] = f"{np.mean(vals):.6f}±{np.std(vals):.6f}"
        table.append(agg)

    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(table)
    if out_json is not None:
        Path(out_json).write_text(json.dumps(table, indent=2))
    return table
