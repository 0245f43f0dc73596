"""Explicit-loop reference implementations for equivalence checking.

Everything here is written with plain Python loops over numpy scalars in
float64, deliberately avoiding the vectorized/tensorized code paths it is
used to verify. Slow by construction; only run on small instances.
"""

from __future__ import annotations

import math

import numpy as np

GRAY = (0.299, 0.587, 0.114)


def attention_oracle(
    x: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    alpha_ref: float,
    n_heads: int,
    query_proj: np.ndarray,
    out_proj: np.ndarray,
) -> np.ndarray:
    """Loop version of the bank cross-attention: x + alpha * Attn(q, K, V).

    x: (B, L, D); keys/values: (N, L_v, D); projections: (D, D).
    """
    B, L, D = x.shape
    dh = D // n_heads
    flat_k = keys.reshape(-1, D)
    flat_v = values.reshape(-1, D)
    M = flat_k.shape[0]
    out = np.array(x, dtype=np.float64, copy=True)
    for b in range(B):
        for l in range(L):
            q_full = np.zeros(D)
            for i in range(D):
                for j in range(D):
                    q_full[i] += query_proj[i, j] * x[b, l, j]
            merged = np.zeros(D)
            for h in range(n_heads):
                q = q_full[h * dh : (h + 1) * dh]
                scores = np.zeros(M)
                for m in range(M):
                    k = flat_k[m, h * dh : (h + 1) * dh]
                    scores[m] = sum(q[c] * k[c] for c in range(dh)) / math.sqrt(dh)
                mx = scores.max()
                exps = np.exp(scores - mx)
                probs = exps / exps.sum()
                for m in range(M):
                    v = flat_v[m, h * dh : (h + 1) * dh]
                    for c in range(dh):
                        merged[h * dh + c] += probs[m] * v[c]
            proj = np.zeros(D)
            for i in range(D):
                for j in range(D):
                    proj[i] += out_proj[i, j] * merged[j]
            for i in range(D):
                out[b, l, i] = x[b, l, i] + alpha_ref * proj[i]
    return out


def mean_square_oracle(a: np.ndarray, b: np.ndarray) -> float:
    fa, fb = a.ravel(), b.ravel()
    total = 0.0
    for i in range(len(fa)):
        total += (fa[i] - fb[i]) ** 2
    return total / len(fa)


def mean_abs_oracle(a: np.ndarray, b: np.ndarray) -> float:
    fa, fb = a.ravel(), b.ravel()
    total = 0.0
    for i in range(len(fa)):
        total += abs(fa[i] - fb[i])
    return total / len(fa)


def gray_oracle(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape[:2]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = (
                GRAY[0] * frame[y, x, 0] + GRAY[1] * frame[y, x, 1] + GRAY[2] * frame[y, x, 2]
            )
    return out


def sobel_oracle(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel / 8 with replicate borders, computed pixel by pixel."""
    h, w = g.shape
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    ix = np.zeros((h, w))
    iy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            sx = sy = 0.0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    sx += kx[dy + 1][dx + 1] * g[yy, xx]
                    sy += kx[dx + 1][dy + 1] * g[yy, xx]
            ix[y, x] = sx / 8.0
            iy[y, x] = sy / 8.0
    return ix, iy


def lk_flow_oracle(g0: np.ndarray, g1: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = g0.shape
    ix, iy = sobel_oracle(g0)
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            it = g1[y, x] - g0[y, x]
            denom = ix[y, x] ** 2 + iy[y, x] ** 2 + eps
            u[y, x] = -it * ix[y, x] / denom
            v[y, x] = -it * iy[y, x] / denom
    return u, v


def bilinear_sample_oracle(frame: np.ndarray, sx: float, sy: float) -> np.ndarray:
    h, w = frame.shape[:2]
    sx = min(max(sx, 0.0), w - 1.0)
    sy = min(max(sy, 0.0), h - 1.0)
    x0, y0 = int(math.floor(sx)), int(math.floor(sy))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = sx - x0, sy - y0
    top = (1 - fx) * frame[y0, x0] + fx * frame[y0, x1]
    bot = (1 - fx) * frame[y1, x0] + fx * frame[y1, x1]
    return (1 - fy) * top + fy * bot


def bilinear_warp_oracle(frame: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = frame.shape[:2]
    out = np.zeros_like(frame)
    for y in range(h):
        for x in range(w):
            out[y, x] = bilinear_sample_oracle(frame, x + u[y, x], y + v[y, x])
    return out


def temporal_loss_oracle(video: np.ndarray, eps: float) -> float:
    T, h, w = video.shape[:3]
    total = 0.0
    for t in range(T - 1):
        g0 = gray_oracle(video[t])
        g1 = gray_oracle(video[t + 1])
        u, v = lk_flow_oracle(g0, g1, eps)
        warped = bilinear_warp_oracle(video[t], u, v)
        for y in range(h):
            for x in range(w):
                for c in range(3):
                    total += (warped[y, x, c] - video[t + 1, y, x, c]) ** 2
    return total / ((T - 1) * 3 * h * w)


def fpn_oracle(levels: list[np.ndarray], projs: list[np.ndarray], fuse: np.ndarray) -> np.ndarray:
    """Top-down add of per-level projections, then the fusion projection."""
    n_tok, _ = levels[0].shape
    dim = projs[0].shape[0]
    acc = np.zeros((n_tok, dim))
    for lvl in range(len(levels) - 1, -1, -1):
        for t in range(n_tok):
            for o in range(dim):
                s = 0.0
                for i in range(levels[lvl].shape[1]):
                    s += projs[lvl][o, i] * levels[lvl][t, i]
                acc[t, o] += s
    out = np.zeros((n_tok, fuse.shape[0]))
    for t in range(n_tok):
        for o in range(fuse.shape[0]):
            s = 0.0
            for i in range(dim):
                s += fuse[o, i] * acc[t, i]
            out[t, o] = s
    return out


def psnr_oracle(a: np.ndarray, b: np.ndarray) -> float:
    mse = mean_square_oracle(a, b)
    if mse <= 0:
        return 99.0
    return min(99.0, 10.0 * math.log10(1.0 / mse))


def ssim_oracle(a: np.ndarray, b: np.ndarray, window: int, c1: float, c2: float) -> float:
    """Sliding uniform windows over grayscale frames, population moments."""
    if a.ndim == 3:
        a, b = a[None], b[None]
    vals = []
    for t in range(a.shape[0]):
        ga = gray_oracle(a[t])
        gb = gray_oracle(b[t])
        h, w = ga.shape
        frame_vals = []
        for y in range(h - window + 1):
            for x in range(w - window + 1):
                wa = ga[y : y + window, x : x + window].ravel()
                wb = gb[y : y + window, x : x + window].ravel()
                n = len(wa)
                mu_a = sum(wa) / n
                mu_b = sum(wb) / n
                var_a = sum((p - mu_a) ** 2 for p in wa) / n
                var_b = sum((p - mu_b) ** 2 for p in wb) / n
                cov = sum((wa[i] - mu_a) * (wb[i] - mu_b) for i in range(n)) / n
                frame_vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
        vals.append(sum(frame_vals) / len(frame_vals))
    return float(sum(vals) / len(vals))


def mask_iou_oracle(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    vals = []
    for t in range(pred.shape[0]):
        inter = union = 0
        for y in range(pred.shape[1]):
            for x in range(pred.shape[2]):
                p = bool(pred[t, y, x])
                g = bool(gt[t, y, x])
                inter += p and g
                union += p or g
        vals.append(1.0 if union == 0 else inter / union)
    return float(sum(vals) / len(vals))


def box_iou_oracle(boxes_a: np.ndarray, boxes_b: np.ndarray, frame_size: tuple[int, int]) -> float:
    """Box IoU by rasterizing each box and counting pixels."""
    h, w = frame_size
    vals = []
    for ba, bb in zip(boxes_a, boxes_b):
        ra = np.zeros((h, w), dtype=bool)
        rb = np.zeros((h, w), dtype=bool)
        if tuple(ba) != (-1, -1, -1, -1):
            ra[ba[1] : ba[3] + 1, ba[0] : ba[2] + 1] = True
        if tuple(bb) != (-1, -1, -1, -1):
            rb[bb[1] : bb[3] + 1, bb[0] : bb[2] + 1] = True
        inter = union = 0
        for y in range(h):
            for x in range(w):
                inter += ra[y, x] and rb[y, x]
                union += ra[y, x] or rb[y, x]
        vals.append(1.0 if union == 0 else inter / union)
    return float(sum(vals) / len(vals))


def flicker_oracle(video: np.ndarray, eps: float) -> float:
    T, h, w = video.shape[:3]
    residuals = []
    for t in range(T - 1):
        g0 = gray_oracle(video[t])
        g1 = gray_oracle(video[t + 1])
        u, v = lk_flow_oracle(g0, g1, eps)
        warped = bilinear_warp_oracle(video[t], u, v)
        total = 0.0
        for y in range(h):
            for x in range(w):
                for c in range(3):
                    total += abs(warped[y, x, c] - video[t + 1, y, x, c])
        residuals.append(total / (3 * h * w))
    return 1.0 - sum(residuals) / len(residuals)
