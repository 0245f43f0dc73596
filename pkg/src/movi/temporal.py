"""Flow-guided temporal consistency: Sobel gradients, Lucas-Kanade flow,
bilinear warping, and the warped-residual loss.

Flow estimation is treated as a constant during optimization: gradients flow
through the warp and the target frame, never through the flow field itself.
All kernels accept torch tensors; numpy arrays are converted on entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ValidationError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Normalized by 1/8 so a unit ramp g(x) = x has unit horizontal gradient.
SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0


@dataclass
class FlowField:
    u: torch.Tensor  # (H, W) horizontal displacement, pixels
    v: torch.Tensor  # (H, W) vertical displacement, pixels
    epsilon: float


def _as_tensor(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def to_gray(frame) -> torch.Tensor:
    """Luma conversion: 0.299 R + 0.587 G + 0.114 B."""
    f = _as_tensor(frame)
    if f.shape[-1] != 3:
        raise ValidationError("expected trailing RGB channel axis")
    r, g, b = f.unbind(-1)
    return GRAY_WEIGHTS[0] * r + GRAY_WEIGHTS[1] * g + GRAY_WEIGHTS[2] * b


def sobel_gradients(g_t, g_next) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(I_x, I_y, I_t): Sobel spatial gradients of g_t with replicate borders,
    temporal difference g_next - g_t."""
    a = _as_tensor(g_t)
    b = _as_tensor(g_next)
    if a.shape != b.shape or a.ndim != 2:
        raise ValidationError("gradient inputs must be two equal (H, W) frames")
    kx = SOBEL_X.to(a.dtype)
    ky = kx.T.contiguous()
    padded = F.pad(a[None, None], (1, 1, 1, 1), mode="replicate")
    ix = F.conv2d(padded, kx[None, None])[0, 0]
    iy = F.conv2d(padded, ky[None, None])[0, 0]
    return ix, iy, b - a


def lk_flow(g_t, g_next, epsilon: float = 1e-6) -> FlowField:
    """Single-pixel Lucas-Kanade approximation of forward optical flow."""
    if epsilon <= 0:
        raise ValidationError("epsilon must be > 0")
    ix, iy, it = sobel_gradients(g_t, g_next)
    denom = ix * ix + iy * iy + epsilon
    return FlowField(u=-it * ix / denom, v=-it * iy / denom, epsilon=float(epsilon))


def bilinear_warp(frame, flow: FlowField) -> torch.Tensor:
    """Sample frame at (x + u, y + v) with border clamping.

    output(y, x) = bilinear(frame, x + u(y, x), y + v(y, x)); differentiable
    in the frame values, and exact index shifting for integer in-range flows.
    """
    f = _as_tensor(frame)
    if f.ndim != 3 or f.shape[-1] != 3:
        raise ValidationError("frame must be (H, W, 3)")
    h, w = f.shape[:2]
    if flow.u.shape != (h, w) or flow.v.shape != (h, w):
        raise ValidationError("flow field does not match the frame")
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=f.dtype), torch.arange(w, dtype=f.dtype), indexing="ij"
    )
    sx = (xs + flow.u.to(f.dtype)).clamp(0, w - 1)
    sy = (ys + flow.v.to(f.dtype)).clamp(0, h - 1)
    x0 = sx.floor().long()
    y0 = sy.floor().long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (sx - x0).unsqueeze(-1)
    wy = (sy - y0).unsqueeze(-1)
    flat = f.reshape(h * w, 3)
    top = (1 - wx) * flat[(y0 * w + x0).reshape(-1)].reshape(h, w, 3) + wx * flat[
        (y0 * w + x1).reshape(-1)
    ].reshape(h, w, 3)
    bot = (1 - wx) * flat[(y1 * w + x0).reshape(-1)].reshape(h, w, 3) + wx * flat[
        (y1 * w + x1).reshape(-1)
    ].reshape(h, w, 3)
    return (1 - wy) * top + wy * bot


def estimate_flows(video, epsilon: float = 1e-6) -> list[FlowField]:
    """Per-pair forward flow on detached grayscale frames."""
    vid = _as_tensor(video)
    if vid.ndim != 4 or vid.shape[-1] != 3:
        raise ValidationError("video must be (T, H, W, 3)")
    if vid.shape[0] < 2:
        raise ValidationError("flow estimation needs at least 2 frames")
    with torch.no_grad():
        gray = to_gray(vid.detach())
    return [lk_flow(gray[t], gray[t + 1], epsilon) for t in range(vid.shape[0] - 1)]


def temporal_loss_given_flows(video, flows: list[FlowField]) -> torch.Tensor:
    """Mean squared warped residual with the flow fields held constant."""
    vid = _as_tensor(video)
    T, h, w = vid.shape[:3]
    if len(flows) != T - 1:
        raise ValidationError("need one flow field per adjacent frame pair")
    total = vid.new_zeros(())
    for t in range(T - 1):
        warped = bilinear_warp(vid[t], flows[t])
        total = total + ((warped - vid[t + 1]) ** 2).sum()
    return total / ((T - 1) * 3 * h * w)


def temporal_loss(video, epsilon: float = 1e-6) -> torch.Tensor:
    """Mean squared warped residual over adjacent pairs.

    L = (1 / ((T-1) * 3HW)) * sum_t || warp(I_t, F_t) - I_{t+1} ||_2^2 with
    F_t estimated on detached grayscale frames (no gradient through flow).
    """
    return temporal_loss_given_flows(video, estimate_flows(video, epsilon))


def total_loss(
    l_diff: torch.Tensor,
    l_depth: torch.Tensor | None,
    l_seg: torch.Tensor | None,
    l_temp: torch.Tensor | None,
    lambda_d: float = 1e-3,
    lambda_s: float = 1e-3,
    lambda_t: float = 5e-2,
    dh: bool = True,
    ch: bool = True,
    tco: bool = True,
) -> torch.Tensor:
    """Weighted sum of the diffusion, depth, segmentation, and temporal terms.

    Disabled components contribute exactly 0 (the term is skipped, so the
    result is numerically independent of its weight).
    """
    total = l_diff
    if dh and l_depth is not None:
        total = total + lambda_d * l_depth
    if ch and l_seg is not None:
        total = total + lambda_s * l_seg
    if tco and l_temp is not None:
        total = total + lambda_t * l_temp
    return total
