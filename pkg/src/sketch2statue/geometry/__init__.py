"""Mesh ingestion, orthographic cameras, rasterization and point clouds."""

from .camera import OrthoCamera, make_turntable_cameras, DEFAULT_HALF_EXTENT, DEFAULT_REFERENCE_DISTANCE
from .mesh import (TriangleMesh, load_mesh, normalize_mesh, save_obj, save_mesh_ply, icosphere,
                   box, merge_meshes, placeholder_statue, sample_surface, point_mesh_distance)
from .raster import RenderSample, rasterize
from .pointcloud import (PointCloud, depth_to_normals, backproject, fuse_views, chamfer_distance,
                         nearest_sq_distances, save_point_cloud, load_point_cloud)

__all__ = [
    "OrthoCamera", "make_turntable_cameras", "DEFAULT_HALF_EXTENT", "DEFAULT_REFERENCE_DISTANCE",
    "TriangleMesh", "load_mesh", "normalize_mesh", "save_obj", "save_mesh_ply", "icosphere", "box",
    "merge_meshes", "placeholder_statue", "sample_surface", "point_mesh_distance",
    "RenderSample", "rasterize",
    "PointCloud", "depth_to_normals", "backproject", "fuse_views", "chamfer_distance",
    "nearest_sq_distances", "save_point_cloud", "load_point_cloud",
]
