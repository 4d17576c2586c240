"""Orthographic turntable camera."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import InvalidInputError

DEFAULT_HALF_EXTENT = 1.1
DEFAULT_REFERENCE_DISTANCE = 2.0


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic camera orbiting the origin.

    Camera space is right-handed: +x right, +y up, +z toward the camera.
    Azimuth turns the camera so that a view at azimuth ``a`` of a mesh equals
    the azimuth-0 view of the mesh rotated by ``a`` about +Y.
    """

    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    ortho_half_extent: float = DEFAULT_HALF_EXTENT
    reference_distance: float = DEFAULT_REFERENCE_DISTANCE
    resolution: int = 128

    def __post_init__(self):
        if not self.ortho_half_extent > 0:
            raise InvalidInputError("ortho_half_extent must be > 0")
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise InvalidInputError("resolution must be an integer >= 8")
        if not -90 <= self.elevation_deg <= 90:
            raise InvalidInputError("elevation_deg must lie in [-90, 90]")
        if not self.reference_distance > 0:
            raise InvalidInputError("reference_distance must be > 0")
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)
        object.__setattr__(self, "resolution", int(self.resolution))

    @cached_property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are the camera right, up and back axes."""
        az, el = np.radians(self.azimuth_deg), np.radians(self.elevation_deg)
        back = np.array([-np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        up_world = np.array([1.0, 0, 0]) if abs(self.elevation_deg) == 90 else np.array([0, 1.0, 0])
        right = np.cross(up_world, back)
        right /= np.linalg.norm(right)
        up = np.cross(back, right)
        return np.stack([right, up, back])

    @property
    def view_direction(self) -> np.ndarray:
        """Unit vector pointing from the camera toward the origin."""
        return -self.rotation[2]

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.ortho_half_extent / self.resolution

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Camera-space (x, y) of every pixel center, each shaped (H, W)."""
        n, h = self.resolution, self.ortho_half_extent
        coords = ((np.arange(n) + 0.5) * 2.0 / n - 1.0) * h
        return np.meshgrid(coords, -coords)

    def world_to_camera(self, points) -> np.ndarray:
        return np.asarray(points, float) @ self.rotation.T

    def camera_to_world(self, points) -> np.ndarray:
        return np.asarray(points, float) @ self.rotation

    def to_dict(self) -> dict:
        return {"azimuth_deg": self.azimuth_deg, "elevation_deg": self.elevation_deg,
                "ortho_half_extent": self.ortho_half_extent,
                "reference_distance": self.reference_distance, "resolution": self.resolution}


def make_turntable_cameras(count: int, elevation_deg: float = 0.0,
                           half_extent: float = DEFAULT_HALF_EXTENT, resolution: int = 128,
                           reference_distance: float = DEFAULT_REFERENCE_DISTANCE):
    """``count`` cameras at azimuths k * 360 / count, sharing everything else."""
    if int(count) != count or count < 1:
        raise InvalidInputError("camera count must be a positive integer")
    step = 360.0 / count
    return [OrthoCamera(k * step, elevation_deg, half_extent, reference_distance, resolution)
            for k in range(int(count))]
