from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass
class CameraPose:
    """Orbit camera looking at the origin.

    azimuth 0 places the camera on the +z axis; azimuth grows counter-clockwise
    when seen from above (+y). Stored modulo 360.
    """

    azimuth: float = 0.0
    elevation: float = 0.0
    distance: float = 4.0
    fov: float = 40.0

    def __post_init__(self) -> None:
        self.azimuth = float(self.azimuth) % 360.0
        if not -89.0 <= self.elevation <= 89.0:
            raise ValidationError("elevation must lie in [-89, 89] degrees")
        if self.distance <= 0:
            raise ValidationError("distance must be > 0")
        if not 0.0 < self.fov < 180.0:
            raise ValidationError("fov must lie in (0, 180) degrees")

    @property
    def position(self) -> np.ndarray:
        a = np.deg2rad(self.azimuth)
        e = np.deg2rad(self.elevation)
        return self.distance * np.array(
            [np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a)]
        )

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (N,3) world points to camera coords; +z_cam is depth into the scene."""
        p = self.position
        forward = -p / np.linalg.norm(p)
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        rel = points - p
        x = rel @ right
        y = rel @ up
        z = rel @ forward
        return np.stack([x, y, z], axis=-1)
