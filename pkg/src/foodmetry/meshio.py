"""Triangle mesh file I/O: ASCII OBJ and binary little-endian PLY.

OBJ reading ignores normals, texture coordinates, materials and groups.
Polygonal faces (quads and larger) are fan-triangulated on load in both
formats. PLY files are written binary little-endian; vertex positions are
stored as float32, which preserves coordinates to well under the 1e-6
relative round-trip tolerance the toolkit guarantees.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MeshFormatError
from .geometry import TriangleMesh

_PLY_SCALAR = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


def load_mesh(path) -> TriangleMesh:
    """Load a mesh, dispatching on file extension (.obj or .ply)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".ply":
        return _load_ply(path)
    raise MeshFormatError(path, f"unsupported mesh extension {ext!r}")


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Save a mesh, dispatching on file extension (.obj or .ply)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        _save_obj(mesh, path)
    elif ext == ".ply":
        _save_ply(mesh, path)
    else:
        raise MeshFormatError(path, f"unsupported mesh extension {ext!r}")


def _load_obj(path: Path) -> TriangleMesh:
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            kind = tokens[0]
            if kind == "v":
                if len(tokens) < 4:
                    raise MeshFormatError(path, "vertex line needs 3 coordinates", line=lineno)
                try:
                    verts.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
                except ValueError as exc:
                    raise MeshFormatError(path, f"bad vertex coordinate: {exc}", line=lineno)
            elif kind == "f":
                if len(tokens) < 4:
                    raise MeshFormatError(path, "face line needs at least 3 indices", line=lineno)
                idx = []
                for tok in tokens[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(path, f"bad face index {tok!r}", line=lineno)
                    if i == 0:
                        raise MeshFormatError(path, "OBJ face indices are 1-based, got 0", line=lineno)
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # vn / vt / usemtl / o / g / s lines are intentionally skipped
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def _save_obj(mesh: TriangleMesh, path: Path) -> None:
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_ply(path: Path) -> TriangleMesh:
    data = path.read_bytes()
    header_end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or header_end < 0:
        raise MeshFormatError(path, "not a PLY file (missing header)", byte_offset=0)
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    body = memoryview(data)[header_end + len(b"end_header\n"):]

    elements: list[tuple[str, int, list]] = []  # (name, count, [(prop, fmt) or list-prop])
    fmt_seen = None
    for lineno, line in enumerate(header, start=1):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt_seen = tokens[1]
            if fmt_seen != "binary_little_endian":
                raise MeshFormatError(
                    path, f"only binary_little_endian PLY is supported, got {fmt_seen}",
                    line=lineno)
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise MeshFormatError(path, "property before any element", line=lineno)
            if tokens[1] == "list":
                count_t, item_t, name = tokens[2], tokens[3], tokens[4]
                if count_t not in _PLY_SCALAR or item_t not in _PLY_SCALAR:
                    raise MeshFormatError(path, f"unknown list property types in {line!r}", line=lineno)
                elements[-1][2].append(("list", name, _PLY_SCALAR[count_t], _PLY_SCALAR[item_t]))
            else:
                if tokens[1] not in _PLY_SCALAR:
                    raise MeshFormatError(path, f"unknown property type {tokens[1]!r}", line=lineno)
                elements[-1][2].append(("scalar", tokens[2], _PLY_SCALAR[tokens[1]]))
    if fmt_seen is None:
        raise MeshFormatError(path, "PLY header has no format line", byte_offset=0)

    verts = np.zeros((0, 3))
    colors = None
    faces: list[tuple[int, int, int]] = []
    offset = 0
    for name, count, props in elements:
        if name == "vertex":
            if any(p[0] == "list" for p in props):
                raise MeshFormatError(path, "list properties on vertices are unsupported",
                                      byte_offset=header_end + offset)
            names = [p[1] for p in props]
            fmt = "<" + "".join(p[2] for p in props)
            size = struct.calcsize(fmt)
            try:
                rows = list(struct.iter_unpack(fmt, body[offset:offset + count * size]))
            except struct.error as exc:
                raise MeshFormatError(path, f"truncated vertex data: {exc}",
                                      byte_offset=header_end + offset)
            if len(rows) != count:
                raise MeshFormatError(path, "truncated vertex data",
                                      byte_offset=header_end + offset)
            offset += count * size
            table = np.array(rows, dtype=np.float64).reshape(count, len(props))
            try:
                cols = [names.index(ax) for ax in ("x", "y", "z")]
            except ValueError:
                raise MeshFormatError(path, "vertex element lacks x/y/z properties",
                                      byte_offset=0)
            verts = table[:, cols]
            if all(ch in names for ch in ("red", "green", "blue")):
                rgb = [names.index(ch) for ch in ("red", "green", "blue")]
                colors = table[:, rgb].astype(np.uint8)
        elif name == "face":
            for _ in range(count):
                for kind, _pname, *fmts in props:
                    if kind != "list":
                        raise MeshFormatError(path, "scalar face properties are unsupported",
                                              byte_offset=header_end + offset)
                    count_fmt, item_fmt = fmts
                    csize = struct.calcsize(count_fmt)
                    try:
                        (nidx,) = struct.unpack_from("<" + count_fmt, body, offset)
                        idx = struct.unpack_from("<" + item_fmt * nidx, body, offset + csize)
                    except struct.error as exc:
                        raise MeshFormatError(path, f"truncated face data: {exc}",
                                              byte_offset=header_end + offset)
                    offset += csize + nidx * struct.calcsize(item_fmt)
                    if nidx < 3:
                        raise MeshFormatError(path, f"face with {nidx} indices",
                                              byte_offset=header_end + offset)
                    for k in range(1, nidx - 1):
                        faces.append((idx[0], idx[k], idx[k + 1]))
        else:
            # Unknown elements (e.g. edges) are skipped if fixed-size.
            if any(p[0] == "list" for p in props):
                raise MeshFormatError(path, f"cannot skip element {name!r} with list properties",
                                      byte_offset=header_end + offset)
            fmt = "<" + "".join(p[2] for p in props)
            offset += count * struct.calcsize(fmt)
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3), colors)


def _save_ply(mesh: TriangleMesh, path: Path) -> None:
    has_colors = mesh.colors is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {mesh.n_vertices}",
              "property float x", "property float y", "property float z"]
    if has_colors:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {mesh.n_faces}",
               "property list uchar int vertex_indices",
               "end_header"]
    chunks = [("\n".join(header) + "\n").encode("ascii")]
    if has_colors:
        for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors):
            chunks.append(struct.pack("<fffBBB", x, y, z, r, g, b))
    else:
        chunks.append(mesh.vertices.astype("<f4").tobytes())
    for a, b, c in mesh.faces:
        chunks.append(struct.pack("<Biii", 3, a, b, c))
    path.write_bytes(b"".join(chunks))
