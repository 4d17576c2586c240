"""Inference and single-view reconstruction: sketch -> predictions -> point cloud."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .errors import InvalidInputError
from .geometry import OrthoCamera, PointCloud, backproject, save_point_cloud
from .net import PredictionSet
from .sketch import SketchImage
from .train import LoadedCheckpoint, load_checkpoint


def prepare_sketch(pixels, size: int) -> np.ndarray:
    """Pad with white to a centered square, then resize to ``size`` x ``size``."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise InvalidInputError(f"sketch must be a non-empty 2-D image, got shape {img.shape}")
    h, w = img.shape
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    square = np.ones((side, side))
    square[top:top + h, left:left + w] = img
    if side == size:
        return square
    resized = Image.fromarray(square.astype(np.float32)).resize((size, size), Image.BILINEAR)
    return np.clip(np.asarray(resized, dtype=np.float64), 0.0, 1.0)


def infer(sketch, checkpoint) -> PredictionSet:
    """Evaluation-mode forward pass on one sketch (deterministic).

    ``checkpoint`` is a path or an already loaded checkpoint.
    """
    ck: LoadedCheckpoint = load_checkpoint(checkpoint)
    pixels = sketch.pixels if isinstance(sketch, SketchImage) else sketch
    x = prepare_sketch(pixels, ck.model.config.image_size)
    ck.model.eval()
    with torch.no_grad():
        pred = ck.model(torch.from_numpy(x).float()[None])
    return pred.to_sets()[0]


def frontal_camera(resolution: int, **kw) -> OrthoCamera:
    return OrthoCamera(kw.get("azimuth_deg", 0.0), kw.get("elevation_deg", 0.0),
                       kw.get("ortho_half_extent", 1.1), kw.get("reference_distance", 2.0),
                       resolution)


@dataclass
class Reconstruction:
    cloud: PointCloud
    status: str  # "ok" or "empty_mask"
    threshold: float


def reconstruct_from_predictions(pred: PredictionSet, camera: Optional[OrthoCamera] = None,
                                 mask_threshold: float = 0.5) -> Reconstruction:
    """Back-project pixels with ``mask >= threshold``; attach world normals and colors.

    The threshold is clamped to [0, 1]. An empty selection yields an empty
    cloud, status ``"empty_mask"`` and a warning.
    """
    n = pred.depth.shape[0]
    camera = camera or frontal_camera(n)
    t = float(np.clip(mask_threshold, 0.0, 1.0))
    keep = np.asarray(pred.mask) >= t
    if not keep.any():
        warnings.warn("no pixel passes the mask threshold; point cloud is empty", RuntimeWarning)
        return Reconstruction(PointCloud.empty(True, True), "empty_mask", t)
    points = backproject(pred.depth, keep, camera).points
    nrm = np.asarray(pred.normals, dtype=np.float64)[keep]
    length = np.linalg.norm(nrm, axis=1, keepdims=True)
    # a zero-length prediction has no direction; fall back to facing the camera
    nrm = np.where(length > 1e-12, nrm / np.where(length > 1e-12, length, 1.0), [0.0, 0.0, 1.0])
    colors = np.clip(np.asarray(pred.rgb, dtype=np.float64)[keep], 0.0, 1.0)
    return Reconstruction(PointCloud(points, camera.camera_to_world(nrm), colors), "ok", t)


def reconstruct(sketch, checkpoint, mask_threshold: float = 0.5,
                camera: Optional[OrthoCamera] = None) -> Reconstruction:
    ck = load_checkpoint(checkpoint)
    pred = infer(sketch, ck)
    camera = camera or frontal_camera(ck.model.config.image_size)
    if camera.resolution != ck.model.config.image_size:
        raise InvalidInputError("camera resolution must equal the checkpoint image_size")
    return reconstruct_from_predictions(pred, camera, mask_threshold)


def export_ply(cloud: PointCloud, path) -> Path:
    """ASCII PLY with positions, normals and float colors."""
    path = Path(path)
    save_point_cloud(cloud, path)
    return path


def _tile(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    return np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)


def save_panel(sketch_pixels, pred: PredictionSet, path, mask_threshold: float = 0.5) -> Path:
    """Side-by-side PNG: sketch | rgb | depth | normals | mask."""
    n = pred.depth.shape[0]
    sk = prepare_sketch(sketch_pixels, n)
    fg = pred.mask >= mask_threshold
    depth = np.zeros_like(pred.depth)
    if fg.any():
        d = pred.depth[fg]
        span = max(float(d.max() - d.min()), 1e-12)
        depth[fg] = 1.0 - (d - d.min()) / span  # near = bright
    normals = np.where(fg[..., None], (np.asarray(pred.normals) + 1) / 2, 0.0)
    tiles = [sk, pred.rgb, depth, normals, pred.mask]
    path = Path(path)
    Image.fromarray(np.concatenate([_tile(t) for t in tiles], axis=1)).save(path)
    return path
