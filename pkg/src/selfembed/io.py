"""XYZ text and binary little-endian PLY point-cloud files.

Both formats may carry ``key value...`` metadata: ``# selfembed key ...``
comment lines in XYZ, ``comment selfembed key ...`` header lines in PLY.
"""

from pathlib import Path
import re

import numpy as np


class CloudParseError(ValueError):
    """A point-cloud file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def cloud_format(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return "ply"
    if suffix in (".xyz", ".txt", ".pts"):
        return "xyz"
    raise CloudParseError(f"unsupported point cloud extension {suffix!r}")


def _parse_meta(text, meta):
    parts = text.split()
    if len(parts) >= 2 and parts[0] == "selfembed":
        meta[parts[1]] = parts[2:]


def read_xyz(path):
    rows, meta = [], {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                _parse_meta(stripped[1:], meta)
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise CloudParseError(f"expected 3 coordinates, got {len(parts)}", lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise CloudParseError(f"malformed number in {stripped!r}", lineno) from None
    if not rows:
        raise ValueError(f"{path}: no points")
    return np.asarray(rows, dtype=np.float64), meta


def write_xyz(path, points, meta=None):
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, vals in (meta or {}).items():
            fh.write(f"# selfembed {key} {' '.join(str(v) for v in vals)}\n")
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if end < 0:
        raise CloudParseError("missing end_header")
    nl = data.find(b"\n", end)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[nl + 1:]
    if not header or header[0].strip() != "ply":
        raise CloudParseError("missing 'ply' magic", 1)
    meta, elements, current = {}, [], None
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] == "ply":
            continue
        key = parts[0]
        if key == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise CloudParseError(f"unsupported format {' '.join(parts[1:])!r}", lineno)
        elif key == "comment":
            _parse_meta(" ".join(parts[1:]), meta)
        elif key == "obj_info":
            continue
        elif key == "element":
            if len(parts) != 3:
                raise CloudParseError("malformed element line", lineno)
            current = [parts[1], int(parts[2]), []]
            elements.append(current)
        elif key == "property":
            if current is None:
                raise CloudParseError("property before element", lineno)
            if parts[1] == "list":
                raise CloudParseError("list properties are not supported", lineno)
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise CloudParseError(f"malformed property {line!r}", lineno)
            current[2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise CloudParseError(f"unknown header keyword {key!r}", lineno)
    offset = 0
    for name, count, props in elements:
        dtype = np.dtype(props)
        if name == "vertex":
            names = [p[0] for p in props]
            if not all(c in names for c in "xyz"):
                raise CloudParseError("vertex element lacks x, y, z")
            if len(body) < offset + count * dtype.itemsize:
                raise CloudParseError("truncated vertex data")
            rec = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
            if pts.shape[0] == 0:
                raise ValueError(f"{path}: no points")
            return pts, meta
        offset += count * dtype.itemsize
    raise CloudParseError("no vertex element")


def write_ply(path, points, meta=None):
    pts = np.ascontiguousarray(points, dtype="<f4")
    lines = ["ply", "format binary_little_endian 1.0"]
    for key, vals in (meta or {}).items():
        lines.append(f"comment selfembed {key} {' '.join(str(v) for v in vals)}".rstrip())
    lines += [f"element vertex {pts.shape[0]}", "property float x", "property float y",
              "property float z", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(pts.tobytes())


def parse_cloud(path, with_meta=False):
    """Read an ``.xyz`` or ``.ply`` file into an ``(N, 3)`` array."""
    fmt = cloud_format(path)
    pts, meta = read_ply(path) if fmt == "ply" else read_xyz(path)
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite coordinates")
    return (pts, meta) if with_meta else pts


def write_cloud(path, points, meta=None):
    if cloud_format(path) == "ply":
        write_ply(path, points, meta)
    else:
        write_xyz(path, points, meta)


def list_clouds(directory):
    """Cloud files in ``directory`` in natural (numeric-aware) name order."""
    def key(p):
        return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", p.name)]

    files = [p for p in Path(directory).iterdir() if p.suffix.lower() in (".ply", ".xyz")]
    return sorted(files, key=key)
