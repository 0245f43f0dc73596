"""Minimal perspective z-buffer rasterizer with flat shading.

View-dependent face visibility is the property downstream conditioning needs,
so there is no lighting model: each triangle carries one color, optionally
modulated by a checker texture through perspective-correct UVs. Depth is
interpolated via 1/z, which is exact in screen space.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .camera import CameraPose
from .mesh import TEXTURE_TEXELS, TriMesh

BACKGROUND_GRAY = 0.5
CHECKER_DARKEN = 0.45


def _checker_mod(u: np.ndarray, v: np.ndarray, cell: int) -> np.ndarray:
    ui = np.floor(u * TEXTURE_TEXELS / cell).astype(np.int64)
    vi = np.floor(v * TEXTURE_TEXELS / cell).astype(np.int64)
    return np.where((ui + vi) % 2 == 0, 1.0, CHECKER_DARKEN)


def rasterize(
    mesh: TriMesh,
    pose: CameraPose,
    size: tuple[int, int],
    center: tuple[float, float] | None = None,
    scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render a mesh; returns (rgb, z, coverage).

    rgb is (h, w, 3) in [0, 1] with gray background, z is the per-pixel camera
    depth in world units (+inf where uncovered), coverage is a boolean mask.
    `center` shifts the principal point to the given pixel coordinates and
    `scale` scales the mesh about the origin before projection.
    """
    h, w = size
    if h < 8 or w < 8:
        raise ValidationError("render size must be at least 8x8")
    if mesh.faces.size == 0:
        raise ValidationError("mesh has no faces")
    if scale * mesh.bounding_radius >= pose.distance:
        raise ValidationError("camera lies inside the mesh bounding sphere")

    cam = pose.world_to_camera(mesh.vertices * scale)
    z = cam[:, 2]
    focal = (h / 2.0) / np.tan(np.deg2rad(pose.fov) / 2.0)
    cx, cy = ((w - 1) / 2.0, (h - 1) / 2.0) if center is None else center
    sx = focal * cam[:, 0] / z + cx
    sy = -focal * cam[:, 1] / z + cy

    # Both primitives are convex and origin-centered, so a face is visible iff
    # its outward normal points toward the camera; culling is winding-free.
    world = mesh.vertices * scale
    tri = world[mesh.faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centroids = tri.mean(axis=1)
    outward = normals * np.sign(np.einsum("fi,fi->f", normals, centroids))[:, None]
    facing = np.einsum("fi,fi->f", centroids - pose.position, outward) < 0.0

    img = np.full((h, w, 3), BACKGROUND_GRAY, dtype=np.float64)
    zbuf = np.full((h, w), np.inf, dtype=np.float64)

    for f in range(len(mesh.faces)):
        if not facing[f]:
            continue
        i0, i1, i2 = mesh.faces[f]
        x0, x1, x2 = sx[i0], sx[i1], sx[i2]
        y0, y1, y2 = sy[i0], sy[i1], sy[i2]
        den = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(den) < 1e-12:
            continue  # edge-on or degenerate
        xa = max(int(np.ceil(min(x0, x1, x2))), 0)
        xb = min(int(np.floor(max(x0, x1, x2))), w - 1)
        ya = max(int(np.ceil(min(y0, y1, y2))), 0)
        yb = min(int(np.floor(max(y0, y1, y2))), h - 1)
        if xa > xb or ya > yb:
            continue
        px, py = np.meshgrid(np.arange(xa, xb + 1), np.arange(ya, yb + 1))
        l1 = ((px - x0) * (y2 - y0) - (x2 - x0) * (py - y0)) / den
        l2 = ((x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)) / den
        l0 = 1.0 - l1 - l2
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        inv_z = l0 / z[i0] + l1 / z[i1] + l2 / z[i2]
        z_px = 1.0 / inv_z
        closer = inside & (z_px < zbuf[ya : yb + 1, xa : xb + 1])
        if not closer.any():
            continue
        color = np.broadcast_to(mesh.face_colors[f], closer.shape + (3,)).copy()
        if mesh.texture == "checker":
            uv = mesh.face_uvs[f]
            u_px = (l0 * uv[0, 0] / z[i0] + l1 * uv[1, 0] / z[i1] + l2 * uv[2, 0] / z[i2]) * z_px
            v_px = (l0 * uv[0, 1] / z[i0] + l1 * uv[1, 1] / z[i1] + l2 * uv[2, 1] / z[i2]) * z_px
            color = color * _checker_mod(u_px, v_px, mesh.checker_cell)[..., None]
        ys, xs = np.nonzero(closer)
        zbuf[ys + ya, xs + xa] = z_px[ys, xs]
        img[ys + ya, xs + xa] = color[ys, xs]

    coverage = np.isfinite(zbuf)
    return img, zbuf, coverage


def render_view(
    mesh: TriMesh, pose: CameraPose, size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render one reference view; returns (rgb, depth, coverage).

    Depth is normalized to [0, 1] with 1 = nearest, using the bounding-sphere
    near/far planes; background pixels get depth 0.
    """
    img, zbuf, coverage = rasterize(mesh, pose, size)
    r = mesh.bounding_radius
    near, far = pose.distance - r, pose.distance + r
    depth = np.zeros_like(zbuf)
    if coverage.any():
        depth[coverage] = np.clip((far - zbuf[coverage]) / (far - near), 0.0, 1.0)
    return img, depth, coverage
