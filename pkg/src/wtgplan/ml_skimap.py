"""Multi-level sparse voxel map.

Only occupied voxels are stored. The index has five sorted layers::

    X index -> Y index -> level -> Z index -> points

and is laid out as flat CSR-style arrays so that every layer can be searched
with a binary search and the numeric kernels can consume it directly.
Within every x-y column the occupied Z indices are split into levels
wherever two consecutive voxels are more than ``level_gap`` apart.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, EmptyCloud, MalformedFile, VersionMismatch
from .pointcloud_io import PointCloud

MAGIC = b"MLSK"
VERSION = 1

# columns are addressed by a single int64 that sorts like (i, j)
_J_OFFSET = 1 << 31
_I_STRIDE = 1 << 32
_GAP_EPS = 1e-9


def column_key(i, j):
    return np.asarray(i, dtype=np.int64) * _I_STRIDE + (np.asarray(j, dtype=np.int64) + _J_OFFSET)


@dataclass(frozen=True)
class MapConfig:
    cell_size: float
    level_gap: float
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if not self.cell_size > 0:
            raise ConfigError("cell_size must be positive")
        if not self.level_gap > 0:
            raise ConfigError("level_gap must be positive")
        if self.level_gap < self.cell_size:
            raise ConfigError("level_gap must be at least one cell")
        if len(self.origin) != 3:
            raise ConfigError("origin must have three coordinates")

    def to_document(self) -> dict:
        return {"cell_size": self.cell_size, "level_gap": self.level_gap,
                "origin": list(self.origin)}


class VoxelKey(NamedTuple):
    i: int
    j: int
    l: int
    k: int


@dataclass
class Voxel:
    key: VoxelKey
    center: np.ndarray
    points: np.ndarray


class LevelSummary(NamedTuple):
    level: int
    min_k: int
    max_k: int
    surface: VoxelKey


def level_partition(occupied_k, d: float, h_L: float) -> list[tuple[int, list[int]]]:
    """Split sorted Z indices into maximal runs whose gaps are at most ``h_L``."""
    ks = [int(k) for k in occupied_k]
    if not ks:
        return []
    limit = h_L / d + _GAP_EPS
    groups = [[ks[0]]]
    for prev, cur in zip(ks, ks[1:]):
        if cur - prev > limit:
            groups.append([cur])
        else:
            groups[-1].append(cur)
    return list(enumerate(groups))


def _level_breaks(k: np.ndarray, same_column: np.ndarray, d: float, h_L: float) -> np.ndarray:
    """Vectorised ``level_partition`` over consecutive voxels of many columns."""
    limit = h_L / d + _GAP_EPS
    return ~same_column | ((k[1:] - k[:-1]) > limit)


@dataclass
class MLSkiMap:
    config: MapConfig
    points: np.ndarray          # (n, 3) grouped by voxel, voxels sorted by (i, j, k)
    vox_ijk: np.ndarray         # (V, 3) int64
    vox_start: np.ndarray       # (V+1,) point offsets
    vox_level: np.ndarray       # (V,) level index inside its column
    col_ij: np.ndarray          # (C, 2) sorted
    col_key: np.ndarray         # (C,) sorted int64 column keys
    col_lvl_start: np.ndarray   # (C+1,) offsets into the level arrays
    lvl_vox_start: np.ndarray   # (Lv+1,) offsets into the voxel arrays
    lvl_col: np.ndarray         # (Lv,) owning column
    layer_i: np.ndarray = field(init=False)        # distinct X indices
    layer_i_start: np.ndarray = field(init=False)  # column offsets per X index

    def __post_init__(self):
        if len(self.col_ij):
            starts = np.flatnonzero(np.r_[True, self.col_ij[1:, 0] != self.col_ij[:-1, 0]])
        else:
            starts = np.zeros(0, dtype=np.int64)
        self.layer_i = self.col_ij[starts, 0] if len(starts) else np.zeros(0, dtype=np.int64)
        self.layer_i_start = np.r_[starts, len(self.col_ij)].astype(np.int64)

    # ---- sizes -----------------------------------------------------------
    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_voxels(self) -> int:
        return len(self.vox_ijk)

    @property
    def n_columns(self) -> int:
        return len(self.col_ij)

    @property
    def n_levels(self) -> int:
        return len(self.lvl_col)

    # ---- per-level surface data -----------------------------------------
    @property
    def lvl_surface_vox(self) -> np.ndarray:
        # voxels are sorted by k inside a level, so the surface is the last one
        return self.lvl_vox_start[1:] - 1

    @property
    def lvl_index(self) -> np.ndarray:
        return self.vox_level[self.lvl_vox_start[:-1]]

    @property
    def lvl_surface_k(self) -> np.ndarray:
        return self.vox_ijk[self.lvl_surface_vox, 2]

    def voxel_centers(self, vox=None) -> np.ndarray:
        ijk = self.vox_ijk if vox is None else self.vox_ijk[vox]
        d = self.config.cell_size
        return np.asarray(self.config.origin) + (ijk + 0.5) * d

    def level_ids(self) -> np.ndarray:
        """(Lv, 3) array of (i, j, l) for every level, in index order."""
        ij = self.col_ij[self.lvl_col]
        return np.column_stack([ij, self.lvl_index]).astype(np.int64)

    def cell_center_xy(self, i, j) -> np.ndarray:
        d = self.config.cell_size
        o = self.config.origin
        return np.column_stack([o[0] + (np.asarray(i) + 0.5) * d, o[1] + (np.asarray(j) + 0.5) * d])

    def key_of(self, point) -> tuple[int, int, int]:
        """(i, j, k) voxel index of a map-frame point."""
        rel = (np.asarray(point, dtype=np.float64) - np.asarray(self.config.origin)) / self.config.cell_size
        i, j, k = np.floor(rel).astype(np.int64)
        return int(i), int(j), int(k)

    # ---- index descent ---------------------------------------------------
    def find_column(self, i: int, j: int) -> int:
        """Column number of (i, j) or -1, by descending the X then Y layer."""
        a = int(np.searchsorted(self.layer_i, i))
        if a == len(self.layer_i) or self.layer_i[a] != i:
            return -1
        lo, hi = self.layer_i_start[a], self.layer_i_start[a + 1]
        b = lo + int(np.searchsorted(self.col_ij[lo:hi, 1], j))
        if b == hi or self.col_ij[b, 1] != j:
            return -1
        return int(b)

    def find_columns(self, i, j) -> np.ndarray:
        """Vectorised column lookup; -1 where the column is unoccupied."""
        keys = column_key(i, j)
        if not len(self.col_key):
            return np.full(np.shape(keys), -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.col_key, keys), len(self.col_key) - 1)
        hit = self.col_key[pos] == keys
        return np.where(hit, pos, -1).astype(np.int64)

    def find_level(self, i: int, j: int, l: int) -> int:
        c = self.find_column(i, j)
        if c < 0 or l < 0:
            return -1
        start, stop = self.col_lvl_start[c], self.col_lvl_start[c + 1]
        if l >= stop - start:
            return -1
        return int(start + l)

    def query_voxel(self, key) -> Voxel | None:
        i, j, l, k = (int(v) for v in key)
        lv = self.find_level(i, j, l)
        if lv < 0:
            return None
        lo, hi = self.lvl_vox_start[lv], self.lvl_vox_start[lv + 1]
        pos = lo + int(np.searchsorted(self.vox_ijk[lo:hi, 2], k))
        if pos == hi or self.vox_ijk[pos, 2] != k:
            return None
        return self._voxel(pos)

    def _voxel(self, v: int) -> Voxel:
        i, j, k = (int(x) for x in self.vox_ijk[v])
        key = VoxelKey(i, j, int(self.vox_level[v]), k)
        pts = self.points[self.vox_start[v]:self.vox_start[v + 1]]
        return Voxel(key, self.voxel_centers(v), pts)

    def surface_voxel(self, i: int, j: int, l: int) -> VoxelKey | None:
        lv = self.find_level(i, j, l)
        if lv < 0:
            return None
        v = int(self.lvl_vox_start[lv + 1] - 1)
        return VoxelKey(int(i), int(j), int(l), int(self.vox_ijk[v, 2]))

    def column_levels(self, i: int, j: int) -> list[LevelSummary]:
        c = self.find_column(i, j)
        if c < 0:
            return []
        out = []
        for lv in range(self.col_lvl_start[c], self.col_lvl_start[c + 1]):
            lo, hi = self.lvl_vox_start[lv], self.lvl_vox_start[lv + 1]
            l = int(self.vox_level[lo])
            min_k, max_k = int(self.vox_ijk[lo, 2]), int(self.vox_ijk[hi - 1, 2])
            out.append(LevelSummary(l, min_k, max_k, VoxelKey(int(i), int(j), l, max_k)))
        return out

    def column_k(self, c: int) -> np.ndarray:
        lo = self.lvl_vox_start[self.col_lvl_start[c]]
        hi = self.lvl_vox_start[self.col_lvl_start[c + 1]]
        return self.vox_ijk[lo:hi, 2]

    # ---- iteration ---------------------------------------------------------
    def voxels(self) -> Iterator[Voxel]:
        for v in range(self.n_voxels):
            yield self._voxel(v)

    def voxel_keys(self) -> list[VoxelKey]:
        return [VoxelKey(int(a), int(b), int(c), int(d))
                for (a, b, d), c in zip(self.vox_ijk.tolist(), self.vox_level.tolist())]

    def voxel_counts(self) -> np.ndarray:
        return np.diff(self.vox_start)

    def multi_level_columns(self) -> int:
        return int(np.count_nonzero(np.diff(self.col_lvl_start) > 1))

    # ---- derived maps ------------------------------------------------------
    def with_points(self, keep: np.ndarray) -> "MLSkiMap":
        """Same voxel structure, points restricted to the boolean mask ``keep``.

        Every voxel must keep at least one point.
        """
        counts = np.add.reduceat(keep.astype(np.int64), self.vox_start[:-1]) if self.n_voxels else np.zeros(0, np.int64)
        if np.any(counts == 0):
            raise ValueError("selection would empty a voxel")
        start = np.r_[0, np.cumsum(counts)].astype(np.int64)
        return MLSkiMap(self.config, self.points[keep].copy(), self.vox_ijk, start,
                        self.vox_level, self.col_ij, self.col_key, self.col_lvl_start,
                        self.lvl_vox_start, self.lvl_col)

    def insert_points(self, points) -> "MLSkiMap":
        """New map holding the current points plus ``points``."""
        pts = np.vstack([self.points, np.asarray(points, dtype=np.float64).reshape(-1, 3)])
        return build_map(pts, self.config)

    # ---- serialisation -----------------------------------------------------
    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        o = self.config.origin
        out.write(MAGIC)
        out.write(struct.pack("<I5dQ", VERSION, self.config.cell_size, self.config.level_gap,
                              o[0], o[1], o[2], self.n_columns))
        counts = self.voxel_counts()
        for c in range(self.n_columns):
            i, j = (int(v) for v in self.col_ij[c])
            l0, l1 = int(self.col_lvl_start[c]), int(self.col_lvl_start[c + 1])
            out.write(struct.pack("<iiI", i, j, l1 - l0))
            for lv in range(l0, l1):
                v0, v1 = int(self.lvl_vox_start[lv]), int(self.lvl_vox_start[lv + 1])
                out.write(struct.pack("<I", v1 - v0))
                out.write(self.vox_ijk[v0:v1, 2].astype("<i4").tobytes())
                for v in range(v0, v1):
                    out.write(struct.pack("<I", int(counts[v])))
                    out.write(self.points[self.vox_start[v]:self.vox_start[v + 1]].astype("<f8").tobytes())
        return out.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_document(self) -> dict:
        columns = []
        for c in range(self.n_columns):
            levels = []
            for lv in range(self.col_lvl_start[c], self.col_lvl_start[c + 1]):
                voxels = []
                for v in range(self.lvl_vox_start[lv], self.lvl_vox_start[lv + 1]):
                    voxels.append({"k": int(self.vox_ijk[v, 2]),
                                   "points": self.points[self.vox_start[v]:self.vox_start[v + 1]].tolist()})
                levels.append({"l": int(self.vox_level[self.lvl_vox_start[lv]]), "voxels": voxels})
            columns.append({"i": int(self.col_ij[c, 0]), "j": int(self.col_ij[c, 1]), "levels": levels})
        return {"format": "MLSK", "version": VERSION, "config": self.config.to_document(),
                "columns": columns}


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedFile("map container truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def map_from_bytes(data: bytes) -> MLSkiMap:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise MalformedFile("not an MLSK map container")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatch(f"map container version {version}, expected {VERSION}")
    d, h_L, ox, oy, oz, n_cols = r.unpack("<5dQ")
    try:
        config = MapConfig(d, h_L, (ox, oy, oz))
    except ConfigError as exc:
        raise MalformedFile(f"bad map config: {exc}") from exc
    col_ij, col_lvl_counts, lvl_counts = [], [], []
    ks, levels, counts, chunks = [], [], [], []
    for _ in range(n_cols):
        i, j, n_lvl = r.unpack("<iiI")
        col_ij.append((i, j))
        col_lvl_counts.append(n_lvl)
        for l in range(n_lvl):
            (n_vox,) = r.unpack("<I")
            lvl_counts.append(n_vox)
            ks.extend(np.frombuffer(r.take(4 * n_vox), dtype="<i4").tolist())
            levels.extend([l] * n_vox)
            for _ in range(n_vox):
                (n_pts,) = r.unpack("<I")
                counts.append(n_pts)
                chunks.append(np.frombuffer(r.take(24 * n_pts), dtype="<f8").reshape(-1, 3))
    if r.pos != len(data):
        raise MalformedFile("trailing bytes after map container")
    col_ij = np.array(col_ij, dtype=np.int64).reshape(-1, 2)
    col_of_lvl = np.repeat(np.arange(len(col_ij)), col_lvl_counts)
    col_of_vox = np.repeat(col_of_lvl, lvl_counts).astype(np.int64)
    vox_ijk = np.column_stack([col_ij[col_of_vox], np.array(ks, dtype=np.int64)]).reshape(-1, 3)
    points = np.vstack(chunks) if chunks else np.zeros((0, 3))
    m = MLSkiMap(config, np.ascontiguousarray(points, dtype=np.float64), vox_ijk,
                 np.r_[0, np.cumsum(counts)].astype(np.int64),
                 np.array(levels, dtype=np.int64), col_ij, column_key(col_ij[:, 0], col_ij[:, 1]),
                 np.r_[0, np.cumsum(col_lvl_counts)].astype(np.int64),
                 np.r_[0, np.cumsum(lvl_counts)].astype(np.int64), col_of_lvl.astype(np.int64))
    _validate(m)
    return m


def _validate(m: MLSkiMap) -> None:
    if len(m.col_key) > 1 and np.any(np.diff(m.col_key) <= 0):
        raise MalformedFile("columns are not strictly sorted")
    if m.n_voxels == 0:
        return
    gid = np.repeat(np.arange(m.n_levels), np.diff(m.lvl_vox_start))
    same = np.r_[False, gid[1:] == gid[:-1]]
    dk = np.r_[1, np.diff(m.vox_ijk[:, 2])]
    if np.any(dk[same] <= 0):
        raise MalformedFile("voxels are not sorted within a level")
    same_col = np.all(m.vox_ijk[1:, :2] == m.vox_ijk[:-1, :2], axis=1)
    breaks = np.r_[True, _level_breaks(m.vox_ijk[:, 2], same_col, m.config.cell_size, m.config.level_gap)]
    if not np.array_equal(breaks, np.r_[True, gid[1:] != gid[:-1]]):
        raise MalformedFile("stored levels disagree with the level gap")


def load_map(path) -> MLSkiMap:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    return map_from_bytes(data)


def build_map(cloud, config: MapConfig) -> MLSkiMap:
    """Quantise every point into its voxel and partition each column into levels."""
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyCloud("cannot build a map from an empty cloud")
    d = config.cell_size
    ijk = np.floor((points - np.asarray(config.origin)) / d).astype(np.int64)
    order = np.lexsort((ijk[:, 2], ijk[:, 1], ijk[:, 0]))
    ijk = ijk[order]
    points = points[order]

    new_vox = np.r_[True, np.any(ijk[1:] != ijk[:-1], axis=1)]
    vox_first = np.flatnonzero(new_vox)
    vox_ijk = ijk[vox_first]
    vox_start = np.r_[vox_first, len(points)].astype(np.int64)

    same_col = np.all(vox_ijk[1:, :2] == vox_ijk[:-1, :2], axis=1)
    col_first = np.flatnonzero(np.r_[True, ~same_col])
    lvl_first = np.flatnonzero(np.r_[True, _level_breaks(vox_ijk[:, 2], same_col, d, config.level_gap)])

    col_ij = vox_ijk[col_first, :2]
    # level ordinal inside its column
    lvl_col = np.searchsorted(col_first, lvl_first, side="right") - 1
    col_lvl_start = np.searchsorted(lvl_first, col_first)
    lvl_index = np.arange(len(lvl_first)) - col_lvl_start[lvl_col]
    lvl_counts = np.diff(np.r_[lvl_first, len(vox_ijk)])
    vox_level = np.repeat(lvl_index, lvl_counts)

    return MLSkiMap(config, points, vox_ijk, vox_start, vox_level.astype(np.int64), col_ij,
                    column_key(col_ij[:, 0], col_ij[:, 1]),
                    np.r_[col_lvl_start, len(lvl_first)].astype(np.int64),
                    np.r_[lvl_first, len(vox_ijk)].astype(np.int64), lvl_col.astype(np.int64))
