"""Point clouds: back-projection, multi-view fusion, chamfer distance, PLY io."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidInputError, MeshParseError, ShapeMismatchError
from .camera import OrthoCamera
from .ply import read_ply, write_ply


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        for name in ("normals", "colors"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.array(val, dtype=np.float64).reshape(-1, 3)
            if len(val) != len(pts):
                raise InvalidInputError(f"{name} count {len(val)} != point count {len(pts)}")
            object.__setattr__(self, name, val)
        for a in (self.points, self.normals, self.colors):
            if a is not None:
                if not np.all(np.isfinite(a)):
                    raise InvalidInputError("point cloud values must be finite")
                a.setflags(write=False)

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, with_normals=False, with_colors=False) -> "PointCloud":
        z = np.zeros((0, 3))
        return cls(z, z if with_normals else None, z if with_colors else None)


def _check_maps(depth, mask, camera: OrthoCamera):
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask)
    if depth.shape != mask.shape:
        raise ShapeMismatchError(f"depth {depth.shape} and mask {mask.shape} differ")
    if depth.shape != (camera.resolution, camera.resolution):
        raise ShapeMismatchError(
            f"maps are {depth.shape}, camera expects {camera.resolution}x{camera.resolution}")
    return depth, mask.astype(bool)


def depth_to_normals(depth, mask, camera: OrthoCamera) -> np.ndarray:
    """Camera-space normals from central differences of an orthographic depth map.

    Pixels whose own mask or any 4-neighbor mask is off (including the image
    border) get the zero vector.
    """
    depth, mask = _check_maps(depth, mask, camera)
    s = camera.pixel_size
    out = np.zeros(depth.shape + (3,))
    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = (mask[1:-1, 1:-1] & mask[:-2, 1:-1] & mask[2:, 1:-1]
                            & mask[1:-1, :-2] & mask[1:-1, 2:])
    # camera z = reference - depth; rows run toward -y
    dx = (depth[1:-1, 2:] - depth[1:-1, :-2]) / (2 * s)
    dy = (depth[:-2, 1:-1] - depth[2:, 1:-1]) / (2 * s)
    n = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    out[1:-1, 1:-1] = n
    out[~interior] = 0.0
    return out


def backproject(depth, mask, camera: OrthoCamera) -> PointCloud:
    """Lift every masked pixel to a world-space point."""
    depth, mask = _check_maps(depth, mask, camera)
    xs, ys = camera.pixel_centers()
    cam = np.stack([xs[mask], ys[mask], camera.reference_distance - depth[mask]], axis=1)
    return PointCloud(camera.camera_to_world(cam))


def _voxel_dedup(cloud: PointCloud, cell: float) -> PointCloud:
    keys = np.floor(cloud.points / cell).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first.sort()
    pick = lambda a: None if a is None else a[first]  # noqa: E731
    return PointCloud(cloud.points[first], pick(cloud.normals), pick(cloud.colors))


def fuse_views(views, voxel_size: Optional[float] = None) -> PointCloud:
    """Concatenate back-projections of ``(depth, mask, camera)`` views.

    With ``voxel_size`` set, only the first point falling in each voxel is
    kept.
    """
    views = list(views)
    if not views:
        raise InvalidInputError("fuse_views needs at least one view")
    clouds = [backproject(d, m, c) for d, m, c in views]
    fused = PointCloud(np.concatenate([c.points for c in clouds]))
    if voxel_size is not None:
        if not voxel_size > 0:
            raise InvalidInputError("voxel_size must be > 0")
        fused = _voxel_dedup(fused, voxel_size)
    return fused


# --------------------------------------------------------------------- chamfer

class _Grid:
    """Uniform hash grid for exact nearest-neighbor queries."""

    def __init__(self, points: np.ndarray):
        self.points = points
        lo, hi = points.min(0), points.max(0)
        extent = hi - lo
        span = extent.max()
        cell = 2 * span / max(len(points), 1) ** (1 / 3)
        self.cell = float(cell) if cell > 0 else 1.0
        self.origin = lo
        keys = np.floor((points - lo) / self.cell).astype(np.int64)
        self.buckets = defaultdict(list)
        for i, k in enumerate(map(tuple, keys)):
            self.buckets[k].append(i)
        self.buckets = {k: np.array(v) for k, v in self.buckets.items()}
        self.key_lo = keys.min(0)
        self.key_hi = keys.max(0)

    def nearest_sq(self, q: np.ndarray) -> float:
        kq = np.floor((q - self.origin) / self.cell).astype(np.int64)
        # shells closer than the occupied key box are empty
        r = int(max(0, np.max(np.maximum(self.key_lo - kq, kq - self.key_hi))))
        max_r = int(np.max(np.maximum(np.abs(kq - self.key_lo), np.abs(kq - self.key_hi))))
        best = np.inf
        while r <= max_r:
            if (2 * r + 1) ** 3 - max(2 * r - 1, 0) ** 3 > len(self.buckets):
                # shell larger than the occupied grid: finish with a full scan
                return min(best, np.sum((self.points - q) ** 2, axis=-1).min())
            for key in _shell(kq, r):
                idx = self.buckets.get(key)
                if idx is None:
                    continue
                d = np.sum((self.points[idx] - q) ** 2, axis=-1).min()
                if d < best:
                    best = d
            # every point outside the searched cube is at least r cells away
            if best <= (r * self.cell) ** 2:
                break
            r += 1
        return best


def _shell(center, r):
    cx, cy, cz = (int(c) for c in center)
    if r == 0:
        yield (cx, cy, cz)
        return
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            if abs(dx) == r or abs(dy) == r:
                for dz in range(-r, r + 1):
                    yield (cx + dx, cy + dy, cz + dz)
            else:
                yield (cx + dx, cy + dy, cz - r)
                yield (cx + dx, cy + dy, cz + r)


def nearest_sq_distances(queries, reference) -> np.ndarray:
    """Squared distance from each query point to its nearest reference point."""
    grid = _Grid(np.asarray(reference, float))
    return np.array([grid.nearest_sq(q) for q in np.asarray(queries, float)])


def chamfer_distance(a, b) -> float:
    """Sum of the two directed mean squared nearest-neighbor distances."""
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, float).reshape(-1, 3)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, float).reshape(-1, 3)
    if len(pa) == 0 or len(pb) == 0:
        raise InvalidInputError("chamfer distance needs two non-empty clouds")
    return float(np.mean(nearest_sq_distances(pa, pb)) + np.mean(nearest_sq_distances(pb, pa)))


# ------------------------------------------------------------------------- io

def save_point_cloud(cloud: PointCloud, path, color_type: str = "float") -> None:
    """Write an ASCII PLY with x y z [nx ny nz] [red green blue].

    Colors are written as floats in [0, 1] by default so that they survive a
    round trip; ``color_type="uchar"`` writes 8-bit colors instead.
    """
    if len(cloud) == 0:
        raise InvalidInputError("refusing to write an empty point cloud")
    p = cloud.points.astype(np.float32)
    cols = {"x": p[:, 0], "y": p[:, 1], "z": p[:, 2]}
    if cloud.normals is not None:
        n = cloud.normals.astype(np.float32)
        cols.update(nx=n[:, 0], ny=n[:, 1], nz=n[:, 2])
    if cloud.colors is not None:
        if color_type == "uchar":
            c = np.round(np.clip(cloud.colors, 0, 1) * 255).astype(np.uint8)
        elif color_type == "float":
            c = cloud.colors.astype(np.float32)
        else:
            raise InvalidInputError(f"unknown color_type {color_type!r}")
        cols.update(red=c[:, 0], green=c[:, 1], blue=c[:, 2])
    try:
        write_ply(path, cols)
    except OSError as exc:
        raise OSError(f"cannot write point cloud to {path}: {exc}") from exc


def load_point_cloud(path) -> PointCloud:
    data = read_ply(path)
    vtx = data.get("vertex")
    if vtx is None or not all(k in vtx for k in "xyz"):
        raise MeshParseError(f"{path}: no vertex x/y/z")

    def triple(keys):
        if not all(k in vtx for k in keys):
            return None
        return np.stack([np.asarray(vtx[k], dtype=np.float64) for k in keys], axis=1), \
            np.asarray(vtx[keys[0]]).dtype

    pts, _ = triple(("x", "y", "z"))
    normals = triple(("nx", "ny", "nz"))
    colors = triple(("red", "green", "blue"))
    if colors is not None:
        c, dt = colors
        colors = c / 255.0 if dt.kind in "ui" else c
    return PointCloud(pts, None if normals is None else normals[0], colors)
