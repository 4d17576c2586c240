"""Turntable dataset generation, on-disk encoding and statue-level splits.

Layout::

    root/metadata.json
    root/statue_<id>/view_<k>/{sketch,rgb,depth,normals,mask}.png

Depth is a 16-bit PNG holding ``round(depth * depth_scale)``; normals are
stored as ``(n + 1) / 2`` in 8-bit RGB and renormalized under the mask on
decode.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DataError, DisjointnessError, InvalidInputError
from .geometry import (OrthoCamera, TriangleMesh, load_mesh, make_turntable_cameras,
                       normalize_mesh, placeholder_statue, rasterize)
from .geometry.raster import RenderSample
from .sketch import DEFAULT_CANNY, DEFAULT_DOG, DEFAULT_LAPLACIAN, sketchify

SCHEMA_VERSION = 1
MODALITIES = ("sketch", "rgb", "depth", "normals", "mask")
PLACEHOLDER_PREFIX = "placeholder:"
_DEFAULT_SKETCH_PARAMS = {"canny": DEFAULT_CANNY, "dog": DEFAULT_DOG,
                          "laplacian": DEFAULT_LAPLACIAN}


# ------------------------------------------------------------------ encoding

def depth_scale_for(reference_distance: float) -> float:
    """Counts per world unit so that depth 2 * reference_distance maps to 65535."""
    return 65535.0 / (2.0 * reference_distance)


def _save_png(arr: np.ndarray, path: Path) -> None:
    # uint8 (H, W) -> L, uint8 (H, W, 3) -> RGB, uint16 (H, W) -> I;16
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")


def _to_u8(x) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255).astype(np.uint8)


def encode_view(sample: RenderSample, sketch_pixels: np.ndarray, view_dir: Path,
                depth_scale: float) -> int:
    """Write the five modality PNGs of one view; returns the number of files written."""
    view_dir.mkdir(parents=True, exist_ok=True)
    depth16 = np.round(np.clip(sample.depth * depth_scale, 0, 65535)).astype(np.uint16)
    normals = np.where(sample.mask[..., None] > 0, (sample.normals + 1.0) / 2.0, 0.0)
    files = {
        "sketch": _to_u8(sketch_pixels),
        "rgb": _to_u8(sample.rgb),
        "depth": depth16,
        "normals": _to_u8(normals),
        "mask": sample.mask.astype(np.uint8) * 255,
    }
    for name in MODALITIES:
        arr = files[name]
        # write then rename so an interrupted run never leaves a truncated file
        tmp = view_dir / f".{name}.png.tmp"
        _save_png(arr, tmp)
        os.replace(tmp, view_dir / f"{name}.png")
    return len(MODALITIES)


def _read(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def decode_view(view_dir: Path, depth_scale: float) -> dict:
    """Inverse of :func:`encode_view`: float arrays, channels last."""
    mask = (_read(view_dir / "mask.png") > 127).astype(np.uint8)
    depth = _read(view_dir / "depth.png").astype(np.float64) / depth_scale
    n = _read(view_dir / "normals.png").astype(np.float64) / 255.0 * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    fg = (mask > 0) & (norm[..., 0] > 0)
    n = np.where(fg[..., None], n / np.where(norm > 0, norm, 1.0), 0.0)
    return {
        "sketch": _read(view_dir / "sketch.png").astype(np.float64) / 255.0,
        "rgb": _read(view_dir / "rgb.png").astype(np.float64) / 255.0,
        "depth": np.where(mask > 0, depth, 0.0),
        "normals": n,
        "mask": mask,
    }


# ---------------------------------------------------------------- generation

@dataclass
class GenDataConfig:
    """Parameters of a dataset generation run.

    ``meshes`` holds OBJ/PLY paths or ``"placeholder:<k>"`` entries, which
    stand for seeded synthetic figures. Statue ids are list positions.
    """

    meshes: list = field(default_factory=list)
    views: int = 360
    resolution: int = 128
    elevation_deg: float = 0.0
    half_extent: float = 1.1
    reference_distance: float = 2.0
    sketch_method: str = "canny"
    sketch_params: dict = field(default_factory=dict)
    placeholder_subdivisions: int = 2
    seed: int = 0

    def __post_init__(self):
        if int(self.views) != self.views or self.views < 1:
            raise InvalidInputError("views must be a positive integer")
        if self.sketch_method not in _DEFAULT_SKETCH_PARAMS:
            raise InvalidInputError(f"unknown sketch method {self.sketch_method!r}")
        OrthoCamera(0.0, self.elevation_deg, self.half_extent, self.reference_distance,
                    self.resolution)  # validates the camera fields

    def resolved_sketch_params(self) -> dict:
        params = dict(_DEFAULT_SKETCH_PARAMS[self.sketch_method])
        params.update(self.sketch_params)
        return params

    def metadata(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "meshes": [str(m) for m in self.meshes],
            "views": self.views,
            "resolution": self.resolution,
            "elevation_deg": self.elevation_deg,
            "half_extent": self.half_extent,
            "reference_distance": self.reference_distance,
            "depth_scale": depth_scale_for(self.reference_distance),
            "sketch_method": self.sketch_method,
            "sketch_params": self.resolved_sketch_params(),
            "placeholder_subdivisions": self.placeholder_subdivisions,
        }


def placeholder_seed(generation_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([generation_seed, k]).generate_state(1)[0])


def resolve_mesh(spec: str, generation_seed: int, subdivisions: int = 2) -> TriangleMesh:
    spec = str(spec)
    if spec.startswith(PLACEHOLDER_PREFIX):
        k = int(spec[len(PLACEHOLDER_PREFIX):])
        return placeholder_statue(placeholder_seed(generation_seed, k), subdivisions)
    return normalize_mesh(load_mesh(spec))


def _view_dir(root: Path, statue: int, view: int) -> Path:
    return root / f"statue_{statue}" / f"view_{view}"


def _view_complete(view_dir: Path) -> bool:
    try:
        names = {e.name for e in os.scandir(view_dir) if e.is_file()}
    except FileNotFoundError:
        return False
    return all(f"{m}.png" in names for m in MODALITIES)


def _render_statue(args) -> int:
    root, statue, meta, views = args
    mesh = resolve_mesh(meta["meshes"][statue], meta["seed"], meta["placeholder_subdivisions"])
    cams = make_turntable_cameras(meta["views"], meta["elevation_deg"], meta["half_extent"],
                                  meta["resolution"], meta["reference_distance"])
    written = 0
    for k in views:
        sample = rasterize(mesh, cams[k], statue)
        sketch = sketchify(sample.gray, meta["sketch_method"], **meta["sketch_params"])
        written += encode_view(sample, sketch.pixels, _view_dir(Path(root), statue, k),
                               meta["depth_scale"])
    return written


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def generate_dataset(config: GenDataConfig, root, workers: Optional[int] = None) -> int:
    """Render every (statue, view) pair into ``root``; returns the count of files written.

    Views whose five files already exist are skipped, and ``metadata.json``
    is only rewritten when its content changes, so a repeated run writes
    nothing. Output bytes depend only on the config.
    """
    root = Path(root)
    missing = [m for m in config.meshes
               if not str(m).startswith(PLACEHOLDER_PREFIX) and not Path(m).is_file()]
    if missing:
        raise DataError("missing mesh files: " + ", ".join(str(m) for m in missing))
    if not config.meshes:
        raise InvalidInputError("no meshes to render")

    meta = config.metadata()
    meta_bytes = _dump_json(meta)
    meta_path = root / "metadata.json"
    if meta_path.is_file():
        old = json.loads(meta_path.read_text())
        if old != meta:
            changed = sorted(k for k in set(old) | set(meta) if old.get(k) != meta.get(k))
            raise DataError(f"{root} holds a dataset generated with different parameters "
                            f"({', '.join(changed)}); use a fresh directory")
    root.mkdir(parents=True, exist_ok=True)

    jobs = []
    for s in range(len(config.meshes)):
        todo = [k for k in range(config.views) if not _view_complete(_view_dir(root, s, k))]
        if todo:
            jobs.append((str(root), s, meta, todo))

    workers = (os.cpu_count() or 1) if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) <= 1:
        written = sum(_render_statue(j) for j in jobs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            written = sum(pool.map(_render_statue, jobs))

    if not meta_path.is_file() or meta_path.read_bytes() != meta_bytes:
        meta_path.write_bytes(meta_bytes)
        written += 1
    return written


# --------------------------------------------------------------------- index

@dataclass(frozen=True)
class ViewRecord:
    statue_id: int
    view_index: int
    directory: Path

    def path(self, modality: str) -> Path:
        return self.directory / f"{modality}.png"


@dataclass(eq=False)
class ViewSample:
    """One decoded training example."""

    sketch: np.ndarray
    rgb: np.ndarray
    depth: np.ndarray
    normals: np.ndarray
    mask: np.ndarray
    statue_id: int
    camera: OrthoCamera


class DatasetIndex:
    """All complete views under a dataset root plus its metadata."""

    def __init__(self, root, records: list[ViewRecord], metadata: dict):
        self.root = Path(root)
        self.records = records
        self.metadata = metadata
        self._by_key = {(r.statue_id, r.view_index): r for r in records}
        if len(self._by_key) != len(records):
            raise DataError("duplicate (statue, view) records")

    @classmethod
    def load(cls, root) -> "DatasetIndex":
        root = Path(root)
        meta_path = root / "metadata.json"
        if not meta_path.is_file():
            raise DataError(f"{root} has no metadata.json")
        try:
            metadata = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path}: {exc}") from exc
        if metadata.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"{meta_path}: unsupported schema_version "
                            f"{metadata.get('schema_version')!r}")
        records, incomplete = [], []
        for s in range(len(metadata["meshes"])):
            for k in range(metadata["views"]):
                d = _view_dir(root, s, k)
                if _view_complete(d):
                    records.append(ViewRecord(s, k, d))
                else:
                    incomplete.append(str(d))
        if incomplete:
            raise DataError(f"{len(incomplete)} incomplete views, e.g. {incomplete[0]}")
        return cls(root, records, metadata)

    def __len__(self):
        return len(self.records)

    @property
    def statue_ids(self) -> list[int]:
        return sorted({r.statue_id for r in self.records})

    @property
    def resolution(self) -> int:
        return int(self.metadata["resolution"])

    def metadata_hash(self) -> str:
        return hashlib.sha256(_dump_json(self.metadata)).hexdigest()

    def records_for(self, statues) -> list[ViewRecord]:
        wanted = set(statues)
        unknown = wanted - set(self.statue_ids)
        if unknown:
            raise InvalidInputError(f"unknown statue ids: {sorted(unknown)}")
        return [r for r in self.records if r.statue_id in wanted]

    def camera(self, view_index: int) -> OrthoCamera:
        m = self.metadata
        return OrthoCamera(view_index * 360.0 / m["views"], m["elevation_deg"], m["half_extent"],
                           m["reference_distance"], m["resolution"])

    def load_sample(self, record: ViewRecord) -> ViewSample:
        arrays = decode_view(record.directory, self.metadata["depth_scale"])
        n = self.resolution
        if arrays["mask"].shape != (n, n):
            raise DataError(f"{record.directory}: images are {arrays['mask'].shape}, "
                            f"metadata says {n}x{n}")
        return ViewSample(statue_id=record.statue_id, camera=self.camera(record.view_index),
                          **arrays)


# -------------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    train_statues: tuple
    val_statues: tuple
    test_statues: tuple
    seed: int

    def __post_init__(self):
        sets = [set(self.train_statues), set(self.val_statues), set(self.test_statues)]
        if (sets[0] & sets[1]) or (sets[0] & sets[2]) or (sets[1] & sets[2]):
            raise DisjointnessError("split statue lists overlap")

    def sample_counts(self, index: DatasetIndex) -> tuple[int, int, int]:
        counts = {}
        for r in index.records:
            counts[r.statue_id] = counts.get(r.statue_id, 0) + 1
        return tuple(sum(counts.get(s, 0) for s in part)
                     for part in (self.train_statues, self.val_statues, self.test_statues))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(tuple(d["train_statues"]), tuple(d["val_statues"]),
                   tuple(d["test_statues"]), int(d["seed"]))


def split_by_statue(statues, fractions=(0.827, 0.091, 0.082), seed: int = 0) -> SplitSpec:
    """Shuffle statue ids with ``seed`` and cut them into train/val/test.

    ``statues`` is a :class:`DatasetIndex` or a list of ids. Val and test get
    ``round(fraction * N)`` statues each; train gets the rest.
    """
    ids = statues.statue_ids if isinstance(statues, DatasetIndex) else sorted(set(statues))
    f = np.asarray(fractions, dtype=float)
    if f.shape != (3,) or np.any(f <= 0) or abs(f.sum() - 1.0) > 1e-3:
        raise InvalidInputError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(ids)
    if n < 3:
        raise InvalidInputError(f"need at least 3 statues to split, got {n}")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(n)]
    n_val, n_test = int(round(f[1] * n)), int(round(f[2] * n))
    if n_val + n_test >= n:
        raise InvalidInputError("fractions leave no training statues")
    val, test = order[:n_val], order[n_val:n_val + n_test]
    train = order[n_val + n_test:]
    return SplitSpec(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), seed)
