"""Reading and writing point clouds, colored overlays and JSON documents.

Supported inputs are PLY (ascii and binary little-endian) and whitespace
separated ``x y z [r g b]`` text. Coordinates are float64 meters in memory.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import EmptyCloud, IoFailure, LengthMismatch, MalformedFile, NonFiniteValue

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


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float64
    colors: np.ndarray | None = None  # (n, 3) uint8

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise LengthMismatch(
                    f"{len(self.colors)} colors for {len(self.points)} points")

    def __len__(self):
        return len(self.points)

    def scaled(self, factor: float) -> "PointCloud":
        return PointCloud(self.points * factor, self.colors)


def _check_cloud(points: np.ndarray, path) -> None:
    if len(points) == 0:
        raise EmptyCloud(f"{path}: no points")
    if not np.isfinite(points).all():
        raise NonFiniteValue(f"{path}: NaN or Inf coordinate")


def _parse_ply_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise MalformedFile(f"{path}: missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, dtype)], has_list]
    while True:
        raw = fh.readline()
        if not raw:
            raise MalformedFile(f"{path}: header not terminated")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2:
                raise MalformedFile(f"{path}: bad format line")
            fmt = parts[1]
        elif parts[0] == "element":
            try:
                elements.append([parts[1], int(parts[2]), [], False])
            except (IndexError, ValueError):
                raise MalformedFile(f"{path}: bad element line {line!r}") from None
        elif parts[0] == "property":
            if not elements:
                raise MalformedFile(f"{path}: property before element")
            if len(parts) >= 2 and parts[1] == "list":
                elements[-1][3] = True
                elements[-1][2].append((parts[-1], None))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise MalformedFile(f"{path}: bad property line {line!r}")
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
        else:
            raise MalformedFile(f"{path}: unexpected header line {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedFile(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        if not elements or elements[0][0] != "vertex":
            # vertices do not come first: only support the common layout
            names = [e[0] for e in elements]
            if "vertex" not in names:
                raise MalformedFile(f"{path}: no vertex element")
            if names.index("vertex") != 0:
                raise MalformedFile(f"{path}: vertex element must come first")
        _, count, props, has_list = elements[0]
        if has_list:
            raise MalformedFile(f"{path}: list properties on vertices are not supported")
        names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in names:
                raise MalformedFile(f"{path}: vertex property {axis!r} missing")
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                raw = fh.readline()
                if not raw:
                    raise MalformedFile(f"{path}: header declares {count} vertices, body is shorter")
                fields = raw.split()
                if len(fields) < len(props):
                    raise MalformedFile(f"{path}: short vertex row {raw!r}")
                rows.append(fields[: len(props)])
            try:
                table = np.array(rows, dtype=np.float64).reshape(count, len(props))
            except ValueError:
                raise MalformedFile(f"{path}: non-numeric vertex data") from None
            cols = {n: table[:, c] for c, n in enumerate(names)}
        else:
            dtype = np.dtype([(n, "<" + t) for n, t in props])
            buf = fh.read(dtype.itemsize * count)
            if len(buf) < dtype.itemsize * count:
                raise MalformedFile(f"{path}: header declares {count} vertices, body is shorter")
            rec = np.frombuffer(buf, dtype=dtype, count=count)
            cols = {n: rec[n].astype(np.float64) for n in names}
    points = np.column_stack([cols["x"], cols["y"], cols["z"]])
    _check_cloud(points, path)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.column_stack([cols["red"], cols["green"], cols["blue"]])
        colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    return PointCloud(points, colors)


def _read_xyz(path) -> PointCloud:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty input is reported below
            table = np.loadtxt(path, comments="#", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    if table.size == 0:
        raise EmptyCloud(f"{path}: no points")
    if table.shape[1] not in (3, 6):
        raise MalformedFile(f"{path}: expected 3 or 6 columns, found {table.shape[1]}")
    points = table[:, :3]
    _check_cloud(points, path)
    colors = None
    if table.shape[1] == 6:
        colors = np.clip(np.rint(table[:, 3:]), 0, 255).astype(np.uint8)
    return PointCloud(points, colors)


def _sniff(path) -> str:
    ext = Path(path).suffix.lower()
    if ext in (".xyz", ".txt", ".pts"):
        return "xyz-text"
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head.startswith(b"ply"):
        if b"binary_little_endian" in head:
            return "ply-binary-le"
        return "ply-ascii"
    if ext == ".ply":
        raise MalformedFile(f"{path}: .ply file without 'ply' magic")
    return "xyz-text"


def load_point_cloud(path, format: str = "auto") -> PointCloud:
    """Load every point of a PLY or xyz-text file.

    ``format`` is one of ``ply-ascii``, ``ply-binary-le``, ``xyz-text`` or
    ``auto`` (extension first, then header).
    """
    if not os.path.isfile(path):
        raise MalformedFile(f"{path}: no such file")
    if format == "auto":
        format = _sniff(path)
    if format in ("ply-ascii", "ply-binary-le"):
        return _read_ply(path)
    if format == "xyz-text":
        return _read_xyz(path)
    raise ValueError(f"unknown format {format!r}")


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}g}"


def write_colored_cloud(cloud: PointCloud, colors, path, digits: int = 9) -> None:
    """Write an ascii PLY with x, y, z, red, green, blue per vertex."""
    colors = np.asarray(colors)
    if colors.ndim != 2 or colors.shape[1] != 3 or len(colors) != len(cloud.points):
        raise LengthMismatch(f"{len(colors)} colors for {len(cloud.points)} points")
    colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(cloud.points)}",
        "property double x", "property double y", "property double z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for p, c in zip(cloud.points.tolist(), colors.tolist()):
        lines.append(f"{_fmt(p[0], digits)} {_fmt(p[1], digits)} {_fmt(p[2], digits)} "
                     f"{c[0]} {c[1]} {c[2]}")
    _write_text(path, "\n".join(lines) + "\n")


def write_line_set(vertices, edges, colors, path, digits: int = 9) -> None:
    """Write an ascii PLY with a vertex element and a colored edge element."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    colors = np.clip(np.rint(np.asarray(colors)), 0, 255).astype(np.uint8).reshape(-1, 3)
    if len(colors) != len(edges):
        raise LengthMismatch(f"{len(colors)} colors for {len(edges)} edges")
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(vertices)}",
        "property double x", "property double y", "property double z",
        f"element edge {len(edges)}",
        "property int vertex1", "property int vertex2",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for p in vertices.tolist():
        lines.append(f"{_fmt(p[0], digits)} {_fmt(p[1], digits)} {_fmt(p[2], digits)}")
    for e, c in zip(edges.tolist(), colors.tolist()):
        lines.append(f"{e[0]} {e[1]} {c[0]} {c[1]} {c[2]}")
    _write_text(path, "\n".join(lines) + "\n")


def write_point_cloud(cloud: PointCloud, path, digits: int = 9) -> None:
    if cloud.colors is not None:
        write_colored_cloud(cloud, cloud.colors, path, digits)
        return
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(cloud.points)}",
        "property double x", "property double y", "property double z", "end_header",
    ]
    for p in cloud.points.tolist():
        lines.append(f"{_fmt(p[0], digits)} {_fmt(p[1], digits)} {_fmt(p[2], digits)}")
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _to_jsonable(value: Any):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteValue(f"non-finite value {value} in document")
        return value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def dumps_json_document(value) -> str:
    return json.dumps(_to_jsonable(value), sort_keys=True, allow_nan=False,
                      separators=(",", ":"), ensure_ascii=False)


def write_json_document(value, path) -> None:
    """Write ``value`` as UTF-8 JSON with lexicographic key order."""
    _write_text(path, dumps_json_document(value) + "\n")


def read_json_document(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid JSON ({exc})") from exc
