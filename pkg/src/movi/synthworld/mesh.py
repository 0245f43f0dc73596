"""Procedural textured primitives used as insertion objects.

A mesh is a plain triangle soup with per-face colors and per-corner UVs.
Primitives are watertight and deterministic given (spec, seed); the seed only
matters when `face_colors` is left unset and a palette has to be drawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .prompts import sample_palette

# Conceptual texel grid per unit UV for the checker texture.
TEXTURE_TEXELS = 8


@dataclass
class MeshSpec:
    shape: str = "cuboid"  # "cuboid" | "uv_sphere"
    half_extents: tuple[float, float, float] = (1.0, 1.0, 1.0)
    radius: float = 1.0
    rings: int = 8
    sectors: int = 8
    face_colors: list[tuple[float, float, float]] | None = None
    texture: str = "flat"  # "flat" | "checker"
    checker_cell: int = 4  # in texels

    def validate(self) -> None:
        if self.shape not in ("cuboid", "uv_sphere"):
            raise ValidationError(f"unknown shape {self.shape!r}")
        if self.shape == "cuboid":
            if any(e <= 0 for e in self.half_extents):
                raise ValidationError("half_extents must be strictly positive")
        else:
            if self.radius <= 0:
                raise ValidationError("radius must be strictly positive")
            if self.rings < 2 or self.sectors < 3:
                raise ValidationError("uv_sphere needs rings >= 2 and sectors >= 3")
        if self.texture not in ("flat", "checker"):
            raise ValidationError(f"unknown texture {self.texture!r}")
        if self.texture == "checker" and self.checker_cell < 1:
            raise ValidationError("checker cell must be >= 1 texel")
        if self.face_colors is not None:
            if len(self.face_colors) == 0:
                raise ValidationError("face_colors must be non-empty when given")
            arr = np.asarray(self.face_colors, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValidationError("face_colors must be RGB triples")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValidationError("color components must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "half_extents": list(self.half_extents),
            "radius": self.radius,
            "rings": self.rings,
            "sectors": self.sectors,
            "face_colors": None if self.face_colors is None else [list(c) for c in self.face_colors],
            "texture": self.texture,
            "checker_cell": self.checker_cell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeshSpec":
        return cls(
            shape=d["shape"],
            half_extents=tuple(d["half_extents"]),
            radius=d["radius"],
            rings=d["rings"],
            sectors=d["sectors"],
            face_colors=None if d["face_colors"] is None else [tuple(c) for c in d["face_colors"]],
            texture=d["texture"],
            checker_cell=d["checker_cell"],
        )


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64, object centered at the origin
    faces: np.ndarray  # (F, 3) int vertex indices
    face_colors: np.ndarray  # (F, 3) float64 in [0, 1]
    face_uvs: np.ndarray  # (F, 3, 2) per-corner UV in [0, 1]
    texture: str = "flat"
    checker_cell: int = 4
    color_names: list[str] = field(default_factory=list)

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())


# Cuboid face definitions: (vertex indices of the quad in CCW order, axis label).
# Vertex k has coords (±ex, ±ey, ±ez) with bit i of k selecting the sign of axis i.
_CUBE_FACES = [
    (1, 5, 7, 3),  # +x
    (4, 0, 2, 6),  # -x
    (2, 3, 7, 6),  # +y
    (0, 4, 5, 1),  # -y
    (4, 6, 7, 5),  # +z
    (0, 1, 3, 2),  # -z
]

_QUAD_UV = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


def _resolve_colors(spec: MeshSpec, n_needed: int, seed: int) -> tuple[np.ndarray, list[str]]:
    if spec.face_colors is not None:
        base = np.asarray(spec.face_colors, dtype=np.float64)
        names: list[str] = []
    else:
        # Two alternating colors: every view shows the full palette, which
        # keeps prompts aligned with any visible face subset.
        names, base = sample_palette(2, np.random.default_rng(seed))
    idx = np.arange(n_needed) % len(base)
    return base[idx], names


def _make_cuboid(spec: MeshSpec, seed: int) -> TriMesh:
    ex, ey, ez = spec.half_extents
    signs = np.array([[(k >> 0) & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.float64)
    vertices = (signs * 2.0 - 1.0) * np.array([ex, ey, ez])

    quad_colors, names = _resolve_colors(spec, 6, seed)
    faces, colors, uvs = [], [], []
    for q, quad in enumerate(_CUBE_FACES):
        a, b, c, d = quad
        faces.append((a, b, c))
        uvs.append(_QUAD_UV[[0, 1, 2]])
        faces.append((a, c, d))
        uvs.append(_QUAD_UV[[0, 2, 3]])
        colors.extend([quad_colors[q], quad_colors[q]])
    return TriMesh(
        vertices=vertices,
        faces=np.asarray(faces, dtype=np.int64),
        face_colors=np.asarray(colors, dtype=np.float64),
        face_uvs=np.asarray(uvs, dtype=np.float64),
        texture=spec.texture,
        checker_cell=spec.checker_cell,
        color_names=names,
    )


def _make_uv_sphere(spec: MeshSpec, seed: int) -> TriMesh:
    r, R, S = spec.radius, spec.rings, spec.sectors
    # 2 poles + (R-1) latitude rings of S points each.
    verts = [np.array([0.0, r, 0.0])]
    for i in range(1, R):
        theta = np.pi * i / R
        for j in range(S):
            phi = 2.0 * np.pi * j / S
            verts.append(r * np.array([np.sin(theta) * np.sin(phi), np.cos(theta), np.sin(theta) * np.cos(phi)]))
    verts.append(np.array([0.0, -r, 0.0]))
    vertices = np.asarray(verts)
    top, bottom = 0, len(verts) - 1

    def ring(i: int, j: int) -> int:
        return 1 + (i - 1) * S + (j % S)

    sector_colors, names = _resolve_colors(spec, S, seed)
    faces, colors, uvs, sector_of_face = [], [], [], []

    def v_coord(i: int) -> float:
        return i / R

    for j in range(S):
        u0, u1 = j / S, (j + 1) / S
        # top fan
        faces.append((top, ring(1, j), ring(1, j + 1)))
        uvs.append([( (u0 + u1) / 2, 0.0), (u0, v_coord(1)), (u1, v_coord(1))])
        sector_of_face.append(j)
        # bottom fan
        faces.append((bottom, ring(R - 1, j + 1), ring(R - 1, j)))
        uvs.append([((u0 + u1) / 2, 1.0), (u1, v_coord(R - 1)), (u0, v_coord(R - 1))])
        sector_of_face.append(j)
        for i in range(1, R - 1):
            va, vb = ring(i, j), ring(i, j + 1)
            vc, vd = ring(i + 1, j + 1), ring(i + 1, j)
            faces.append((va, vb, vc))
            uvs.append([(u0, v_coord(i)), (u1, v_coord(i)), (u1, v_coord(i + 1))])
            sector_of_face.append(j)
            faces.append((va, vc, vd))
            uvs.append([(u0, v_coord(i)), (u1, v_coord(i + 1)), (u0, v_coord(i + 1))])
            sector_of_face.append(j)
    colors = sector_colors[np.asarray(sector_of_face) % len(sector_colors)]
    return TriMesh(
        vertices=vertices,
        faces=np.asarray(faces, dtype=np.int64),
        face_colors=np.asarray(colors, dtype=np.float64),
        face_uvs=np.asarray(uvs, dtype=np.float64),
        texture=spec.texture,
        checker_cell=spec.checker_cell,
        color_names=names,
    )


def make_object(spec: MeshSpec, seed: int = 0) -> TriMesh:
    """Build a watertight textured primitive; deterministic given (spec, seed)."""
    spec.validate()
    if spec.shape == "cuboid":
        return _make_cuboid(spec, seed)
    return _make_uv_sphere(spec, seed)
