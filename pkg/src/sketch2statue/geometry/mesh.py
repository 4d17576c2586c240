"""Triangle meshes: loading, normalization, primitives and surface queries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import InvalidInputError, MeshParseError, UnsupportedFormatError
from .ply import read_ply, write_ply


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle soup with optional per-vertex RGB colors in [0, 1]."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _frozen(np.reshape(self.vertices, (-1, 3)), np.float64)
        f = _frozen(np.reshape(self.faces, (-1, 3)), np.int64)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            bad = int(np.argmax((f < 0).any(1) | (f >= len(v)).any(1)))
            raise InvalidInputError(
                f"face {bad} references vertex outside [0, {len(v)})")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.vertex_colors is not None:
            c = _frozen(np.reshape(self.vertex_colors, (-1, 3)), np.float64)
            if len(c) != len(v):
                raise InvalidInputError("vertex_colors must have one row per vertex")
            object.__setattr__(self, "vertex_colors", c)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of triangle corner positions."""
        return self.vertices[self.faces]

    def transformed(self, matrix) -> "TriangleMesh":
        """Apply a 3x3 linear map to every vertex."""
        m = np.asarray(matrix, dtype=np.float64)
        return TriangleMesh(self.vertices @ m.T, self.faces, self.vertex_colors)

    def translated(self, offset) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, float), self.faces,
                            self.vertex_colors)


# --------------------------------------------------------------------------- io

def _load_obj(path: Path) -> TriangleMesh:
    verts, colors, faces = [], [], []
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        toks = line.split()
        if not toks or toks[0].startswith("#"):
            continue
        if toks[0] == "v":
            try:
                vals = [float(t) for t in toks[1:]]
            except ValueError:
                raise MeshParseError(f"line {lineno}: bad vertex {line!r}") from None
            if len(vals) < 3:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append(vals[:3])
            colors.append(vals[3:6] if len(vals) >= 6 else None)
        elif toks[0] == "f":
            idx = []
            for t in toks[1:]:
                try:
                    k = int(t.split("/")[0])
                except ValueError:
                    raise MeshParseError(f"line {lineno}: bad face index {t!r}") from None
                # OBJ is 1-based; negative indices count back from the current end
                k = k - 1 if k > 0 else len(verts) + k
                if not 0 <= k < len(verts):
                    raise MeshParseError(
                        f"line {lineno}: face {len(faces)} references vertex "
                        f"{t.split('/')[0]} but only {len(verts)} vertices are defined")
                idx.append(k)
            if len(idx) < 3:
                raise MeshParseError(f"line {lineno}: face with fewer than 3 vertices")
            for j in range(1, len(idx) - 1):
                faces.append((idx[0], idx[j], idx[j + 1]))
    has_color = bool(colors) and all(c is not None for c in colors)
    return TriangleMesh(np.reshape(verts, (-1, 3)), np.reshape(faces, (-1, 3)),
                        np.asarray(colors) if has_color else None)


def _load_ply(path: Path) -> TriangleMesh:
    data = read_ply(path)
    if "vertex" not in data:
        raise MeshParseError(f"{path}: no vertex element")
    vtx = data["vertex"]
    try:
        verts = np.stack([vtx["x"], vtx["y"], vtx["z"]], axis=1).astype(np.float64)
    except KeyError:
        raise MeshParseError(f"{path}: vertex element lacks x/y/z") from None
    colors = None
    if all(k in vtx for k in ("red", "green", "blue")):
        colors = np.stack([vtx["red"], vtx["green"], vtx["blue"]], axis=1).astype(np.float64)
        if np.asarray(vtx["red"]).dtype.kind in "ui":
            colors /= 255.0
    faces = []
    face_el = data.get("face", {})
    lists = face_el.get("vertex_indices", face_el.get("vertex_index", []))
    for i, poly in enumerate(lists):
        poly = [int(k) for k in poly]
        for k in poly:
            if not 0 <= k < len(verts):
                raise MeshParseError(
                    f"{path}: face {i} references vertex {k} but only {len(verts)} vertices exist")
        if len(poly) < 3:
            raise MeshParseError(f"{path}: face {i} has fewer than 3 vertices")
        for j in range(1, len(poly) - 1):
            faces.append((poly[0], poly[j], poly[j + 1]))
    return TriangleMesh(verts, np.reshape(faces, (-1, 3)), colors)


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or PLY triangle mesh; polygons are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise MeshParseError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply(path)
    raise UnsupportedFormatError(f"unsupported mesh format {suffix!r} ({path})")


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = []
    if mesh.vertex_colors is not None:
        for v, c in zip(mesh.vertices, mesh.vertex_colors):
            lines.append("v %.9g %.9g %.9g %.6g %.6g %.6g" % (*v, *c))
    else:
        lines.extend("v %.9g %.9g %.9g" % tuple(v) for v in mesh.vertices)
    lines.extend("f %d %d %d" % tuple(f + 1) for f in mesh.faces)
    Path(path).write_text("\n".join(lines) + "\n")


def save_mesh_ply(mesh: TriangleMesh, path, binary=False) -> None:
    cols = {"x": mesh.vertices[:, 0], "y": mesh.vertices[:, 1], "z": mesh.vertices[:, 2]}
    if mesh.vertex_colors is not None:
        rgb = np.round(np.clip(mesh.vertex_colors, 0, 1) * 255).astype(np.uint8)
        cols.update(red=rgb[:, 0], green=rgb[:, 1], blue=rgb[:, 2])
    write_ply(path, cols, faces=mesh.faces, binary=binary)


# ------------------------------------------------------------------ normalize

def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin and scale so max |v| = 1."""
    if mesh.vertex_count == 0:
        raise InvalidInputError("cannot normalize an empty mesh")
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    centered = mesh.vertices - (lo + hi) / 2
    radius = np.linalg.norm(centered, axis=1).max()
    if not radius > 0:
        raise InvalidInputError("cannot normalize a mesh with zero extent")
    return TriangleMesh(centered / radius, mesh.faces, mesh.vertex_colors)


# ------------------------------------------------------------------ primitives

def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Geodesic sphere with outward winding; vertices lie exactly on the sphere."""
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.array(verts) * radius, np.array(faces))


def box(lo=(-1, -1, -1), hi=(1, 1, 1)) -> TriangleMesh:
    """Axis-aligned box, 8 vertices and 12 outward-wound triangles."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    faces = [(0, 2, 3), (0, 3, 1),   # z = lo
             (4, 5, 7), (4, 7, 6),   # z = hi
             (0, 1, 5), (0, 5, 4),   # y = lo
             (2, 6, 7), (2, 7, 3),   # y = hi
             (0, 4, 6), (0, 6, 2),   # x = lo
             (1, 3, 7), (1, 7, 5)]   # x = hi
    return TriangleMesh(corners, np.array(faces))


def merge_meshes(meshes) -> TriangleMesh:
    verts, faces, colors, offset = [], [], [], 0
    with_color = all(m.vertex_colors is not None for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        if with_color:
            colors.append(m.vertex_colors)
        offset += m.vertex_count
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces),
                        np.concatenate(colors) if with_color else None)


def placeholder_statue(seed: int, subdivisions: int = 2) -> TriangleMesh:
    """A crude standing figure (ellipsoid torso, head, limbs) with seeded proportions.

    Stand-in for scanned statue assets in tests and demos; the result is
    normalized.
    """
    rng = np.random.default_rng(seed)
    unit = icosphere(subdivisions)

    def ellipsoid(center, radii):
        return TriangleMesh(unit.vertices * radii + center, unit.faces)

    torso_h = rng.uniform(0.8, 1.2)
    width = rng.uniform(0.25, 0.45)
    parts = [
        ellipsoid((0, 0, 0), (width, torso_h / 2, rng.uniform(0.15, 0.3))),
        ellipsoid((rng.uniform(-0.05, 0.05), torso_h / 2 + 0.18, 0), [rng.uniform(0.12, 0.2)] * 3),
    ]
    for side in (-1, 1):
        tilt = rng.uniform(-0.3, 0.6)
        parts.append(ellipsoid((side * (width + 0.08), rng.uniform(-0.1, 0.15), tilt * 0.2),
                               (0.07, rng.uniform(0.3, 0.45), 0.07)))
        parts.append(ellipsoid((side * width * 0.45, -torso_h / 2 - 0.3, 0),
                               (0.09, rng.uniform(0.3, 0.4), 0.09)))
    if rng.uniform() < 0.5:  # cloak / plinth variation
        parts.append(ellipsoid((0, -torso_h / 2 - 0.1, -0.1), (width * 1.2, 0.35, 0.2)))
    return normalize_mesh(merge_meshes(parts))


# ------------------------------------------------------------- surface queries

def sample_surface(mesh: TriangleMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface, shape (count, 3)."""
    tri = mesh.triangles()
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    if not area.sum() > 0:
        raise InvalidInputError("mesh has zero surface area")
    which = rng.choice(len(tri), size=count, p=area / area.sum())
    r1, r2 = rng.uniform(size=(2, count, 1))
    s = np.sqrt(r1)
    t = tri[which]
    return (1 - s) * t[:, 0] + s * (1 - r2) * t[:, 1] + s * r2 * t[:, 2]


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all shaped (..., 3).

    Region classification after Ericson, "Real-Time Collision Detection".
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]

        # edge regions
        t_ab = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(m[..., None], a + ab * t_ab[..., None], out)
        t_ac = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(m[..., None], a + ac * t_ac[..., None], out)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        out = np.where(m[..., None], b + (c - b) * t_bc[..., None], out)
    # vertex regions
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
    return out


def point_mesh_distance(points, mesh: TriangleMesh, chunk: int = 2_000_000) -> np.ndarray:
    """Unsigned distance from each point to the nearest triangle (brute force)."""
    points = np.asarray(points, float).reshape(-1, 3)
    tri = mesh.triangles()
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    out = np.empty(len(points))
    step = max(1, chunk // max(len(tri), 1))
    for i in range(0, len(points), step):
        p = points[i:i + step, None, :]
        q = _closest_on_triangles(p, a[None], b[None], c[None])
        out[i:i + step] = np.sqrt(np.sum((q - p) ** 2, -1).min(1))
    return out
