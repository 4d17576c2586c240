"""Minimal PLY reader/writer (ASCII and binary little-endian)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import MeshParseError, UnsupportedFormatError

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class _Property:
    def __init__(self, name, dtype, count_dtype=None):
        self.name = name
        self.dtype = dtype
        self.count_dtype = count_dtype  # set for list properties

    @property
    def is_list(self):
        return self.count_dtype is not None


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.properties: list[_Property] = []


def _parse_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise UnsupportedFormatError("missing 'ply' magic line")
    fmt = None
    elements: list[_Element] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise MeshParseError("unexpected end of file inside PLY header")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            fmt = tokens[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormatError(f"unsupported PLY format {fmt!r}")
        elif key == "element":
            elements.append(_Element(tokens[1], int(tokens[2])))
        elif key == "property":
            if not elements:
                raise MeshParseError("property declared before any element")
            try:
                if tokens[1] == "list":
                    prop = _Property(tokens[4], _PLY_TYPES[tokens[3]], _PLY_TYPES[tokens[2]])
                else:
                    prop = _Property(tokens[2], _PLY_TYPES[tokens[1]])
            except (KeyError, IndexError):
                raise MeshParseError(f"bad property line: {raw!r}") from None
            elements[-1].properties.append(prop)
        elif key == "end_header":
            break
        else:
            raise MeshParseError(f"unknown header keyword {key!r}")
    if fmt is None:
        raise MeshParseError("PLY header has no format line")
    return fmt, elements


def _read_ascii(fh, elements):
    data = {}
    lines = iter(fh.read().decode("ascii", errors="replace").splitlines())
    for el in elements:
        rows = []
        for i in range(el.count):
            try:
                line = next(lines)
                while not line.strip():
                    line = next(lines)
            except StopIteration:
                raise MeshParseError(f"{el.name} {i}: unexpected end of file") from None
            rows.append(line.split())
        data[el.name] = _columns_from_tokens(el, rows)
    return data


def _columns_from_tokens(el, rows):
    if not any(p.is_list for p in el.properties):
        try:
            table = np.array(rows, dtype=np.float64).reshape(el.count, len(el.properties))
        except ValueError:
            raise MeshParseError(f"malformed {el.name} rows") from None
        return {p.name: table[:, j].astype(p.dtype) for j, p in enumerate(el.properties)}
    cols = {p.name: [] for p in el.properties}
    for i, toks in enumerate(rows):
        pos = 0
        try:
            for p in el.properties:
                if p.is_list:
                    n = int(toks[pos])
                    cols[p.name].append(np.array(toks[pos + 1:pos + 1 + n], dtype=p.dtype))
                    if len(cols[p.name][-1]) != n:
                        raise IndexError
                    pos += 1 + n
                else:
                    cols[p.name].append(float(toks[pos]))
                    pos += 1
        except (IndexError, ValueError):
            raise MeshParseError(f"{el.name} {i}: malformed row {' '.join(toks)!r}") from None
    return {p.name: cols[p.name] if p.is_list else np.asarray(cols[p.name], dtype=p.dtype)
            for p in el.properties}


def _read_binary(buf, elements):
    data = {}
    offset = 0
    for el in elements:
        if not any(p.is_list for p in el.properties):
            dt = np.dtype([(p.name, "<" + p.dtype) for p in el.properties])
            need = dt.itemsize * el.count
            if offset + need > len(buf):
                raise MeshParseError(f"{el.name}: file truncated")
            arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=offset)
            offset += need
            data[el.name] = {p.name: arr[p.name].copy() for p in el.properties}
            continue
        cols = {p.name: [] for p in el.properties}
        for i in range(el.count):
            for p in el.properties:
                if p.is_list:
                    cdt = np.dtype("<" + p.count_dtype)
                    if offset + cdt.itemsize > len(buf):
                        raise MeshParseError(f"{el.name} {i}: file truncated")
                    n = int(np.frombuffer(buf, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    vdt = np.dtype("<" + p.dtype)
                    if offset + n * vdt.itemsize > len(buf):
                        raise MeshParseError(f"{el.name} {i}: file truncated")
                    cols[p.name].append(np.frombuffer(buf, vdt, n, offset).copy())
                    offset += n * vdt.itemsize
                else:
                    vdt = np.dtype("<" + p.dtype)
                    if offset + vdt.itemsize > len(buf):
                        raise MeshParseError(f"{el.name} {i}: file truncated")
                    cols[p.name].append(np.frombuffer(buf, vdt, 1, offset)[0])
                    offset += vdt.itemsize
        data[el.name] = {p.name: cols[p.name] if p.is_list else np.asarray(cols[p.name], dtype=p.dtype)
                         for p in el.properties}
    return data


def read_ply(path) -> dict[str, dict[str, object]]:
    """Read a PLY file into ``{element: {property: values}}``.

    Scalar properties come back as 1-D arrays, list properties as lists of
    arrays.
    """
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    with fh:
        fmt, elements = _parse_header(fh)
        if fmt == "ascii":
            return _read_ascii(fh, elements)
        return _read_binary(fh.read(), elements)


def write_ply(path, vertex_columns: dict[str, np.ndarray], faces=None, binary=False):
    """Write a vertex table (and optional triangle faces) as PLY.

    ``vertex_columns`` maps property name to a 1-D array; float arrays are
    written as ``float``, uint8 arrays as ``uchar``.
    """
    names = list(vertex_columns)
    cols = [np.asarray(vertex_columns[k]) for k in names]
    n = len(cols[0]) if cols else 0
    types = []
    for c in cols:
        if c.dtype == np.uint8:
            types.append("uchar")
        elif np.issubdtype(c.dtype, np.integer):
            types.append("int")
        else:
            types.append("float")
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property {t} {name}" for t, name in zip(types, names)]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64)
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            dt = np.dtype([(nm, "<" + {"uchar": "u1", "int": "i4", "float": "f4"}[t])
                           for nm, t in zip(names, types)])
            table = np.empty(n, dtype=dt)
            for nm, c in zip(names, cols):
                table[nm] = c
            fh.write(table.tobytes())
            if faces is not None:
                fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
                ftab = np.empty(len(faces), dtype=fdt)
                ftab["n"] = 3
                ftab["idx"] = faces
                fh.write(ftab.tobytes())
        else:
            fmts = ["%d" if t != "float" else "%.9g" for t in types]
            lines = []
            for i in range(n):
                lines.append(" ".join(f % c[i] for f, c in zip(fmts, cols)))
            if faces is not None:
                lines.extend(f"3 {a} {b} {c}" for a, b, c in faces)
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))
