"""Weighted traversability graph.

Nodes are the surface voxels of every level. A directed edge ``u -> v`` joins
x-y neighbor columns whose surfaces are within ``c_max`` vertically, and
carries the cost of leaving ``u`` in the heading that points at ``v``.
Blocked headings produce no edge.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MalformedFile, NoNodeInRange, UnknownNode, VersionMismatch
from .ml_skimap import _GAP_EPS, MLSkiMap
from .traversability import HEADING_OFFSETS, TraversabilityField

GRAPH_MAGIC = b"WTGB"
GRAPH_VERSION = 1


@dataclass(frozen=True)
class WtgConfig:
    c_max: float = 0.1

    def __post_init__(self):
        if not self.c_max > 0:
            raise ConfigError("c_max must be positive")


def connectivity(z_u: float, z_v: float, c_max: float) -> int:
    return 1 if abs(z_u - z_v) <= c_max else 0


@dataclass
class WTG:
    config: WtgConfig
    node_ids: np.ndarray  # (n, 3) i, j, l sorted
    pos: np.ndarray       # (n, 3) surface voxel centers
    indptr: np.ndarray    # (n+1,)
    targets: np.ndarray   # (E,)
    weights: np.ndarray   # (E,)
    _index: dict = field(default=None, init=False, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.targets)

    def index_of(self, node_id) -> int:
        if self._index is None:
            self._index = {tuple(r): n for n, r in enumerate(self.node_ids.tolist())}
        try:
            return self._index[tuple(int(v) for v in node_id)]
        except (KeyError, TypeError, ValueError):
            raise UnknownNode(node_id) from None

    def node_id(self, index: int) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.node_ids[index])

    def out_edges(self, u: int):
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return self.targets[lo:hi], self.weights[lo:hi]

    def edge_sources(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))

    def has_edge(self, u: int, v: int) -> bool:
        t, _ = self.out_edges(u)
        return bool(np.any(t == v))

    def edge_weight(self, u: int, v: int) -> float:
        t, w = self.out_edges(u)
        hit = np.flatnonzero(t == v)
        if not len(hit):
            raise KeyError((u, v))
        return float(w[hit[0]])

    # ---- serialisation -------------------------------------------------
    def to_document(self) -> dict:
        ids = self.node_ids.tolist()
        nodes = [{"id": i, "pos": p} for i, p in zip(ids, self.pos.tolist())]
        src = self.edge_sources().tolist()
        edges = [{"from": ids[u], "to": ids[v], "w": w}
                 for u, v, w in zip(src, self.targets.tolist(), self.weights.tolist())]
        return {"config": {"c_max": self.config.c_max}, "nodes": nodes, "edges": edges}

    @classmethod
    def from_document(cls, doc: dict) -> "WTG":
        try:
            config = WtgConfig(float(doc["config"]["c_max"]))
            ids = np.array([n["id"] for n in doc["nodes"]], dtype=np.int64).reshape(-1, 3)
            pos = np.array([n["pos"] for n in doc["nodes"]], dtype=np.float64).reshape(-1, 3)
            index = {tuple(r): k for k, r in enumerate(ids.tolist())}
            src = np.array([index[tuple(e["from"])] for e in doc["edges"]], dtype=np.int64)
            dst = np.array([index[tuple(e["to"])] for e in doc["edges"]], dtype=np.int64)
            w = np.array([float(e["w"]) for e in doc["edges"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise MalformedFile(f"bad graph document: {exc}") from exc
        return _assemble(config, ids, pos, src, dst, w)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(GRAPH_MAGIC)
        out.write(struct.pack("<IdQ", GRAPH_VERSION, self.config.c_max, self.n_nodes))
        out.write(self.node_ids.astype("<i4").tobytes())
        out.write(self.pos.astype("<f8").tobytes())
        out.write(struct.pack("<Q", self.n_edges))
        out.write(self.edge_sources().astype("<u4").tobytes())
        out.write(self.targets.astype("<u4").tobytes())
        out.write(self.weights.astype("<f8").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WTG":
        if data[:4] != GRAPH_MAGIC:
            raise MalformedFile("not a WTGB graph container")
        try:
            version, c_max, n = struct.unpack_from("<IdQ", data, 4)
            if version != GRAPH_VERSION:
                raise VersionMismatch(f"graph container version {version}, expected {GRAPH_VERSION}")
            off = 4 + struct.calcsize("<IdQ")
            ids = np.frombuffer(data, "<i4", 3 * n, off).reshape(n, 3).astype(np.int64)
            off += 12 * n
            pos = np.frombuffer(data, "<f8", 3 * n, off).reshape(n, 3).copy()
            off += 24 * n
            (e,) = struct.unpack_from("<Q", data, off)
            off += 8
            src = np.frombuffer(data, "<u4", e, off).astype(np.int64)
            dst = np.frombuffer(data, "<u4", e, off + 4 * e).astype(np.int64)
            w = np.frombuffer(data, "<f8", e, off + 8 * e).copy()
            if off + 16 * e != len(data):
                raise MalformedFile("graph container has trailing or missing bytes")
        except (struct.error, ValueError) as exc:
            raise MalformedFile(f"graph container truncated: {exc}") from exc
        return _assemble(WtgConfig(c_max), ids, pos, src, dst, w)

    def line_set(self, max_weight: float):
        """Vertices, edges and green-to-black colors for PLY export."""
        src = self.edge_sources()
        edges = np.column_stack([src, self.targets])
        t = np.clip(self.weights / max(max_weight, 1e-12), 0.0, 1.0)
        colors = np.column_stack([np.zeros_like(t), 255 * (1 - t), np.zeros_like(t)])
        return self.pos, edges, colors


def _assemble(config, ids, pos, src, dst, w) -> WTG:
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    indptr = np.r_[0, np.cumsum(np.bincount(src, minlength=len(ids)))].astype(np.int64)
    return WTG(config, ids, pos, indptr, dst, w)


def load_graph(path) -> WTG:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    if data[:4] == GRAPH_MAGIC:
        return WTG.from_bytes(data)
    import json
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"{path}: not a graph file ({exc})") from exc
    return WTG.from_document(doc)


def build_wtg(m: MLSkiMap, field: TraversabilityField, config: WtgConfig | None = None) -> WTG:
    """Combine height connectivity between neighbor surfaces with the directional costs."""
    config = config or WtgConfig()
    field.check_domain(m)
    ids = m.level_ids()
    pos = m.voxel_centers(m.lvl_surface_vox)
    k = m.lvl_surface_k
    limit = config.c_max / m.config.cell_size + _GAP_EPS
    ci, cj = ids[:, 0], ids[:, 1]
    max_levels = int(np.diff(m.col_lvl_start).max()) if m.n_columns else 0
    src, dst, wts = [], [], []
    for n, (dx, dy) in enumerate(HEADING_OFFSETS):
        cost = field.costs[:, n]
        open_ = np.isfinite(cost)
        cols = m.find_columns(ci + dx, cj + dy)
        ok = open_ & (cols >= 0)
        safe = np.where(ok, cols, 0)
        start = m.col_lvl_start[safe]
        cnt = np.where(ok, m.col_lvl_start[safe + 1] - start, 0)
        for lvl in range(max_levels):
            has = cnt > lvl
            v = np.where(has, start + lvl, 0)
            conn = has & (np.abs(k - k[v]) <= limit)
            u = np.flatnonzero(conn)
            src.append(u)
            dst.append(v[u])
            wts.append(cost[u])
    src = np.concatenate(src) if src else np.zeros(0, np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
    wts = np.concatenate(wts) if wts else np.zeros(0)
    return _assemble(config, ids, pos, src.astype(np.int64), dst.astype(np.int64), wts.astype(np.float64))


def snap_to_node(wtg: WTG, p, radius: float) -> tuple[int, int, int]:
    """Nearest node within ``radius`` of ``p`` (3D); ties go to the smallest id."""
    if not radius > 0:
        raise ConfigError("snap radius must be positive")
    if wtg.n_nodes == 0:
        raise NoNodeInRange("graph has no nodes")
    dist = np.linalg.norm(wtg.pos - np.asarray(p, dtype=np.float64), axis=1)
    best = int(np.argmin(dist))  # argmin returns the first, i.e. smallest id
    if not dist[best] <= radius:
        raise NoNodeInRange(f"no node within {radius} m of {list(map(float, p))}")
    return wtg.node_id(best)
