"""Software z-buffer rasterizer producing RGB, depth, normal and mask images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import OrthoCamera
from .mesh import TriangleMesh

# faces whose camera-space normal is this close to edge-on are skipped
_EDGE_ON = 1e-12
# keeps silhouettes visible against the black background
AMBIENT = 0.2


@dataclass(frozen=True, eq=False)
class RenderSample:
    """One rendered view.

    ``depth`` is the distance along the view axis from the plane located
    ``camera.reference_distance`` in front of the origin; background pixels
    carry depth 0, zero normals and mask 0.
    """

    rgb: np.ndarray      # (H, W, 3) in [0, 1]
    depth: np.ndarray    # (H, W)
    normals: np.ndarray  # (H, W, 3) camera space
    mask: np.ndarray     # (H, W) in {0, 1}
    camera: OrthoCamera
    statue_id: int = -1

    def __post_init__(self):
        for name in ("rgb", "depth", "normals", "mask"):
            a = np.array(getattr(self, name), copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def gray(self) -> np.ndarray:
        return self.rgb.mean(axis=2)


def rasterize(mesh: TriangleMesh, camera: OrthoCamera, statue_id: int = -1) -> RenderSample:
    """Render ``mesh`` orthographically with flat shading.

    Every triangle is rasterized regardless of winding; the front-most one
    wins per pixel and its normal is oriented toward the camera. Shading is
    ``AMBIENT + (1 - AMBIENT) * n_z`` (Lambertian, light along the view axis),
    gray unless the mesh has vertex colors, on a black background.
    """
    n = camera.resolution
    h = camera.ortho_half_extent
    pc = camera.world_to_camera(mesh.vertices)
    # continuous pixel coordinates; pixel centers sit on integers
    px = (pc[:, 0] / h + 1.0) * n / 2 - 0.5
    py = (1.0 - pc[:, 1] / h) * n / 2 - 0.5

    zbuf = np.full((n, n), -np.inf)
    normals = np.zeros((n, n, 3))
    rgb = np.zeros((n, n, 3))
    xs, ys = camera.pixel_centers()
    colors = mesh.vertex_colors

    tri_cam = pc[mesh.faces]
    fn = np.cross(tri_cam[:, 1] - tri_cam[:, 0], tri_cam[:, 2] - tri_cam[:, 0])
    norm = np.linalg.norm(fn, axis=1)
    valid = norm > 0
    fn[valid] /= norm[valid, None]
    fn[fn[:, 2] < 0] *= -1

    # per-face pixel bounding boxes; faces that cover no pixel center are skipped
    fx, fy = px[mesh.faces], py[mesh.faces]
    u_lo = np.maximum(np.ceil(fx.min(1)), 0).astype(np.int64)
    u_hi = np.minimum(np.floor(fx.max(1)), n - 1).astype(np.int64)
    v_lo = np.maximum(np.ceil(fy.min(1)), 0).astype(np.int64)
    v_hi = np.minimum(np.floor(fy.max(1)), n - 1).astype(np.int64)
    todo = valid & (np.abs(fn[:, 2]) > _EDGE_ON) & (u_lo <= u_hi) & (v_lo <= v_hi)

    for f in np.flatnonzero(todo):
        i0, i1, i2 = mesh.faces[f]
        x0, x1, x2 = fx[f]
        y0, y1, y2 = fy[f]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0:
            continue
        uu, vv = np.meshgrid(np.arange(u_lo[f], u_hi[f] + 1, dtype=float),
                             np.arange(v_lo[f], v_hi[f] + 1, dtype=float))
        w0 = ((x1 - uu) * (y2 - vv) - (x2 - uu) * (y1 - vv)) / area
        w1 = ((x2 - uu) * (y0 - vv) - (x0 - uu) * (y2 - vv)) / area
        w2 = ((x0 - uu) * (y1 - vv) - (x1 - uu) * (y0 - vv)) / area
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        rows = vv[inside].astype(int)
        cols = uu[inside].astype(int)
        # plane equation keeps depth exact for image-parallel faces
        nx, ny, nz = fn[f]
        p0 = tri_cam[f, 0]
        z = p0[2] - (nx * (xs[rows, cols] - p0[0]) + ny * (ys[rows, cols] - p0[1])) / nz
        closer = z > zbuf[rows, cols]
        if not closer.any():
            continue
        rows, cols, z = rows[closer], cols[closer], z[closer]
        zbuf[rows, cols] = z
        normals[rows, cols] = fn[f]
        shade = AMBIENT + (1 - AMBIENT) * fn[f, 2]
        if colors is None:
            rgb[rows, cols] = shade
        else:
            b = np.stack([w0[inside][closer], w1[inside][closer], w2[inside][closer]], 1)
            rgb[rows, cols] = shade * (b @ colors[[i0, i1, i2]])

    mask = np.isfinite(zbuf)
    depth = np.where(mask, camera.reference_distance - np.where(mask, zbuf, 0.0), 0.0)
    return RenderSample(np.clip(rgb, 0, 1), depth, normals, mask.astype(np.uint8),
                        camera, statue_id)
