"""Static vehicle/terrain interaction analysis.

The vehicle is placed at the center of a surface cell in each of eight
headings. Four wheel disks are projected onto the map, the three-wheel
footprint combinations ABC, ABD, ACD and BCD are each fitted with a plane,
and the pose is rejected (cost ``BLOCKED``) when a wheel lands on missing
terrain, a footprint is degenerate, terrain rises above the chassis, or the
tilt exceeds the vehicle limit. Accepted poses cost ``tan`` of the worst tilt.

Vehicle frame: x to the right, y forward, wheels at (+-W, +-L).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._kernels import (REASON_COLLISION, REASON_DEGENERATE, REASON_OCCLUDED, REASON_OK,
                       REASON_TILT, ROT_COS, ROT_SIN)
from .errors import ConfigError, DegenerateFootprint, FieldMismatch, MalformedFile
from .ml_skimap import _I_STRIDE, _J_OFFSET, MLSkiMap

BLOCKED = math.inf

# neighbor offset for heading index n (travel direction 45 deg * n from +x)
HEADING_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
REASON_NAMES = {REASON_OK: "ok", REASON_OCCLUDED: "occluded", REASON_DEGENERATE: "degenerate",
                REASON_COLLISION: "collision", REASON_TILT: "tilt"}
WHEEL_LABELS = ("A", "B", "C", "D")
# three-wheel ground-contact cases, as wheel indices into WHEEL_LABELS
CASES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))


def is_blocked(cost) -> bool:
    return not math.isfinite(cost)


def heading_to_rotation(n: int) -> int:
    """Rotation index (multiples of 45 deg) that points the vehicle's +y along heading ``n``."""
    return (n - 2) % 8


@dataclass(frozen=True)
class VehicleModel:
    W: float
    L: float
    R: float
    H: float
    max_tilt: float  # radians

    def __post_init__(self):
        for name in ("W", "L", "R", "H", "max_tilt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"vehicle {name} must be positive")
        if not self.max_tilt < math.pi / 2:
            raise ConfigError("max_tilt must be below 90 degrees")

    @classmethod
    def from_profile(cls, path) -> "VehicleModel":
        values = {}
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for raw in lines:
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise ConfigError(f"{path}: cannot parse line {raw!r}")
            key, value = (s.strip() for s in line.split(sep, 1))
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigError(f"{path}: {key} is not a number") from None
        missing = [k for k in ("W", "L", "R", "H", "max_tilt_deg") if k not in values]
        if missing:
            raise ConfigError(f"{path}: missing keys {', '.join(missing)}")
        return cls(values["W"], values["L"], values["R"], values["H"],
                   math.radians(values["max_tilt_deg"]))

    def to_document(self) -> dict:
        return {"W": self.W, "L": self.L, "R": self.R, "H": self.H,
                "max_tilt_deg": math.degrees(self.max_tilt)}

    def wheel_centers(self) -> np.ndarray:
        W, L = self.W, self.L
        return np.array([[-W, L, 0.0], [-W, -L, 0.0], [W, L, 0.0], [W, -L, 0.0]])


@dataclass(frozen=True)
class TraversabilityConfig:
    """``c_ref``: vertical window for matching a wheel cell to a level
    (default: ``c_max`` plus the rise a wheel sees at the tilt limit).
    ``overhead``: terrain higher than this above the pose belongs to a level
    the vehicle drives under (default: the map's level gap)."""
    c_max: float = 0.1
    c_ref: float | None = None
    overhead: float | None = None

    def resolve_c_ref(self, vehicle: VehicleModel) -> float:
        if self.c_ref is not None:
            return float(self.c_ref)
        reach = math.hypot(vehicle.W, vehicle.L) + vehicle.R
        return self.c_max + math.tan(vehicle.max_tilt) * reach

    def resolve_overhead(self, m: MLSkiMap) -> float:
        return float(self.overhead if self.overhead is not None else m.config.level_gap)


class Pose2D(NamedTuple):
    tx: float
    ty: float
    phi: float  # radians, multiple of 45 deg

    @property
    def rotation(self) -> int:
        n = self.phi / (math.pi / 4)
        r = round(n)
        if abs(n - r) > 1e-9:
            raise ValueError("pose heading must be a multiple of 45 degrees")
        return r % 8


class Disk(NamedTuple):
    label: str
    center: np.ndarray  # map x-y
    radius: float


def _rot(r: int) -> tuple[float, float]:
    return float(ROT_COS[r]), float(ROT_SIN[r])


def vehicle_to_map(C, pose: Pose2D) -> np.ndarray:
    """Rotate a vehicle-frame point about z by the pose heading, then translate in x-y."""
    C = np.asarray(C, dtype=np.float64)
    try:
        cs, sn = _rot(pose.rotation)
    except ValueError:
        cs, sn = math.cos(pose.phi), math.sin(pose.phi)
    x = cs * C[0] - sn * C[1] + pose.tx
    y = sn * C[0] + cs * C[1] + pose.ty
    return np.array([x, y, C[2]])


def wheel_footprints(pose: Pose2D, vehicle: VehicleModel) -> list[Disk]:
    return [Disk(lab, vehicle_to_map(c, pose)[:2], vehicle.R)
            for lab, c in zip(WHEEL_LABELS, vehicle.wheel_centers())]


def disk_cells(m: MLSkiMap, disk: Disk) -> list[tuple[int, int]]:
    """Cells whose center lies inside the disk, plus the cell holding the disk center."""
    d = m.config.cell_size
    ox, oy = m.config.origin[:2]
    cx, cy = float(disk.center[0]), float(disk.center[1])
    i0, i1 = math.floor((cx - disk.radius - ox) / d) - 1, math.floor((cx + disk.radius - ox) / d) + 1
    j0, j1 = math.floor((cy - disk.radius - oy) / d) - 1, math.floor((cy + disk.radius - oy) / d) + 1
    cells = set()
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            px, py = ox + (i + 0.5) * d, oy + (j + 0.5) * d
            if math.hypot(px - cx, py - cy) <= disk.radius:
                cells.add((i, j))
    cells.add((math.floor((cx - ox) / d), math.floor((cy - oy) / d)))
    return sorted(cells)


def _nearest_level(m: MLSkiMap, c: int, reference_z: float, window: float) -> int:
    best, best_dz = -1, math.inf
    for lv in range(m.col_lvl_start[c], m.col_lvl_start[c + 1]):
        z = _surface_z(m, lv)
        dz = abs(z - reference_z)
        if dz <= window and dz < best_dz:
            best, best_dz = lv, dz
    return best


def _surface_z(m: MLSkiMap, lv: int) -> float:
    v = m.lvl_vox_start[lv + 1] - 1
    return m.config.origin[2] + (m.vox_ijk[v, 2] + 0.5) * m.config.cell_size


def _level_points(m: MLSkiMap, lv: int) -> np.ndarray:
    v = m.lvl_vox_start[lv + 1] - 1
    return m.points[m.vox_start[v]:m.vox_start[v + 1]]


def footprint_points(m: MLSkiMap, disk: Disk, reference_z: float, c_ref: float):
    """Surface points under a wheel disk and whether any covered cell is unusable."""
    chunks, occluded = [], False
    for i, j in disk_cells(m, disk):
        c = m.find_column(i, j)
        lv = _nearest_level(m, c, reference_z, c_ref) if c >= 0 else -1
        if lv < 0:
            occluded = True
            continue
        chunks.append(_level_points(m, lv))
    pts = np.vstack(chunks) if chunks else np.zeros((0, 3))
    return pts, occluded


@dataclass
class PlaneFit:
    normal: np.ndarray
    centroid: np.ndarray
    count: int
    rms: float

    def signed_height(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.centroid) @ self.normal


def fit_plane(points) -> PlaneFit:
    """Least-squares plane: normal is the minor eigenvector of the covariance, pointing up."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateFootprint(f"{len(pts)} points cannot define a plane")
    centroid = pts.mean(axis=0)
    diff = pts - centroid
    w, V = np.linalg.eigh(diff.T @ diff / len(pts))
    if not w[2] > 0 or w[1] <= _kernels.RANK_EPS * w[2]:
        raise DegenerateFootprint("footprint points are collinear")
    n = V[:, 0]
    if n[2] < 0:
        n = -n
    return PlaneFit(n, centroid, len(pts), math.sqrt(max(w[0], 0.0)))


def tilt_angle(fit: PlaneFit) -> float:
    return math.acos(min(1.0, float(fit.normal[2]) / float(np.linalg.norm(fit.normal))))


def chassis_collision(fit: PlaneFit, region_points, H: float) -> bool:
    pts = np.asarray(region_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return False
    return bool(np.any(fit.signed_height(pts) > H))


def region_points(m: MLSkiMap, pose: Pose2D, vehicle: VehicleModel, reference_z: float,
                  overhead: float) -> np.ndarray:
    """Surface points whose x-y projection lies inside the wheel-center rectangle."""
    d = m.config.cell_size
    ox, oy = m.config.origin[:2]
    reach = math.hypot(vehicle.W, vehicle.L)
    cs, sn = _rot(pose.rotation)
    chunks = []
    for i in range(math.floor((pose.tx - reach - ox) / d), math.floor((pose.tx + reach - ox) / d) + 1):
        for j in range(math.floor((pose.ty - reach - oy) / d), math.floor((pose.ty + reach - oy) / d) + 1):
            c = m.find_column(i, j)
            if c < 0:
                continue
            best = -1
            for lv in range(m.col_lvl_start[c], m.col_lvl_start[c + 1]):
                if _surface_z(m, lv) <= reference_z + overhead:
                    best = lv
            if best < 0:
                continue
            pts = _level_points(m, best)
            dx, dy = pts[:, 0] - pose.tx, pts[:, 1] - pose.ty
            lx, ly = cs * dx + sn * dy, -sn * dx + cs * dy
            chunks.append(pts[(np.abs(lx) <= vehicle.W) & (np.abs(ly) <= vehicle.L)])
    return np.vstack(chunks) if chunks else np.zeros((0, 3))


# ---------------------------------------------------------------------------
# sweep

def _sweep_geometry(vehicle: VehicleModel, d: float):
    """Cell offsets (relative to the pose cell) covered by each wheel, per rotation."""
    per_rot = []
    for r in range(8):
        cs, sn = _rot(r)
        wheel_sets = []
        for cxv, cyv, _ in vehicle.wheel_centers():
            cx, cy = cs * cxv - sn * cyv, sn * cxv + cs * cyv
            cells = set()
            k = int(math.ceil(vehicle.R / d)) + 1
            bi, bj = math.floor(cx / d + 0.5), math.floor(cy / d + 0.5)
            for di in range(bi - k, bi + k + 1):
                for dj in range(bj - k, bj + k + 1):
                    if math.hypot(di * d - cx, dj * d - cy) <= vehicle.R:
                        cells.add((di, dj))
            cells.add((bi, bj))
            wheel_sets.append(cells)
        per_rot.append(wheel_sets)
    maxu = max(len(set().union(*ws)) for ws in per_rot)
    ucell = np.zeros((8, maxu, 2), dtype=np.int64)
    ucount = np.zeros(8, dtype=np.int64)
    case_mask = np.zeros((8, 4, maxu), dtype=np.bool_)
    for r, ws in enumerate(per_rot):
        cells = sorted(set().union(*ws))
        ucount[r] = len(cells)
        ucell[r, :len(cells)] = cells
        for ci, case in enumerate(CASES):
            covered = set().union(*(ws[w] for w in case))
            for u, cell in enumerate(cells):
                case_mask[r, ci, u] = cell in covered
    k = int(math.ceil(math.hypot(vehicle.W, vehicle.L) / d + 0.5))
    g = np.arange(-k, k + 1)
    region = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2).astype(np.int64)
    return ucell, ucount, case_mask, region


def sweep_inputs(m: MLSkiMap, vehicle: VehicleModel, config: TraversabilityConfig) -> dict:
    surface_vox = m.lvl_surface_vox
    centers = m.voxel_centers(surface_vox)
    m_n, m_a, m_B = _kernels.surface_moments(m.points, m.vox_start, surface_vox, centers)
    ucell, ucount, case_mask, region = _sweep_geometry(vehicle, m.config.cell_size)
    return {
        "col_key": m.col_key, "col_ij": np.ascontiguousarray(m.col_ij), "col_lvl_start": m.col_lvl_start,
        "lvl_col": m.lvl_col, "lvl_surface_z": np.ascontiguousarray(centers[:, 2]),
        "lvl_surface_vox": np.ascontiguousarray(surface_vox), "lvl_center": np.ascontiguousarray(centers),
        "m_n": m_n, "m_a": m_a, "m_B": m_B, "vox_start": m.vox_start, "points": m.points,
        "ucell": ucell, "ucount": ucount, "case_mask": case_mask, "region": region,
        "d": m.config.cell_size, "ox": m.config.origin[0], "oy": m.config.origin[1],
        "c_ref": config.resolve_c_ref(vehicle), "overhead": config.resolve_overhead(m),
        "W": vehicle.W, "L": vehicle.L, "H": vehicle.H, "max_tilt": vehicle.max_tilt,
        "j_offset": _J_OFFSET, "i_stride": _I_STRIDE,
        "max_levels": int(np.diff(m.col_lvl_start).max()) if m.n_columns else 0,
    }


def _pose_level(m: MLSkiMap, pose: Pose2D, level: int) -> int:
    d = m.config.cell_size
    ox, oy = m.config.origin[:2]
    i, j = math.floor((pose.tx - ox) / d), math.floor((pose.ty - oy) / d)
    lv = m.find_level(i, j, level)
    if lv < 0:
        raise ValueError(f"no level {level} at cell ({i}, {j})")
    return lv


def pose_diagnostics(m: MLSkiMap, pose: Pose2D, level: int, vehicle: VehicleModel,
                     config: TraversabilityConfig | None = None, backend=None) -> dict:
    """Cost, hazard reason and worst tilt of one pose centred on a surface cell."""
    config = config or TraversabilityConfig()
    lv = _pose_level(m, pose, level)
    cost, reason, tilt = _kernels.pose_sweep(sweep_inputs(m, vehicle, config), [lv], [pose.rotation],
                                             backend=backend)
    return {"cost": float(cost[0]), "reason": REASON_NAMES[int(reason[0])], "tilt": float(tilt[0])}


def pose_cost(m: MLSkiMap, pose: Pose2D, level: int, vehicle: VehicleModel,
              config: TraversabilityConfig | None = None, backend=None) -> float:
    return pose_diagnostics(m, pose, level, vehicle, config, backend)["cost"]


def pose_cost_reference(m: MLSkiMap, pose: Pose2D, level: int, vehicle: VehicleModel,
                        config: TraversabilityConfig | None = None) -> float:
    """Composition of the public per-step operations; slow, used to cross-check the sweep."""
    config = config or TraversabilityConfig()
    lv = _pose_level(m, pose, level)
    ref_z = _surface_z(m, lv)
    c_ref = config.resolve_c_ref(vehicle)
    wheels = []
    for disk in wheel_footprints(pose, vehicle):
        pts, occluded = footprint_points(m, disk, ref_z, c_ref)
        if occluded:
            return BLOCKED
        wheels.append((disk, pts))
    region = region_points(m, pose, vehicle, ref_z, config.resolve_overhead(m))
    worst = 0.0
    for case in CASES:
        # union over cells, so a cell shared by two disks contributes once
        cells = sorted(set().union(*(disk_cells(m, wheels[w][0]) for w in case)))
        pts = np.vstack([_level_points(m, _nearest_level(m, m.find_column(i, j), ref_z, c_ref))
                         for i, j in cells])
        try:
            fit = fit_plane(pts)
        except DegenerateFootprint:
            return BLOCKED
        if chassis_collision(fit, region, vehicle.H):
            return BLOCKED
        alpha = tilt_angle(fit)
        if alpha > vehicle.max_tilt:
            return BLOCKED
        worst = max(worst, alpha)
    return math.tan(worst)


class TraversabilityVector(NamedTuple):
    cell: tuple[int, int]
    level: int
    costs: tuple


@dataclass
class TraversabilityField:
    ids: np.ndarray      # (Lv, 3) i, j, l
    costs: np.ndarray    # (Lv, 8), inf = blocked
    reasons: np.ndarray  # (Lv, 8) int8
    tilts: np.ndarray    # (Lv, 8) radians, nan when not evaluated

    def __len__(self):
        return len(self.ids)

    def index_of(self, i: int, j: int, l: int) -> int:
        hit = np.flatnonzero((self.ids[:, 0] == i) & (self.ids[:, 1] == j) & (self.ids[:, 2] == l))
        return int(hit[0]) if len(hit) else -1

    def vector(self, i: int, j: int, l: int) -> TraversabilityVector:
        idx = self.index_of(i, j, l)
        if idx < 0:
            raise KeyError((i, j, l))
        return TraversabilityVector((i, j), l, tuple(float(c) for c in self.costs[idx]))

    def check_domain(self, m: MLSkiMap) -> None:
        if len(self.ids) != m.n_levels or not np.array_equal(self.ids, m.level_ids()):
            raise FieldMismatch("field does not cover exactly the map's surface voxels")

    def to_document(self) -> dict:
        cells = []
        for idx, (i, j, l) in enumerate(self.ids.tolist()):
            F = [None if not math.isfinite(c) else float(c) for c in self.costs[idx].tolist()]
            cells.append({"id": [i, j, l], "F": F})
        return {"blocked": None, "headings_deg": [45 * n for n in range(8)], "cells": cells}

    @classmethod
    def from_document(cls, doc: dict) -> "TraversabilityField":
        try:
            ids = np.array([c["id"] for c in doc["cells"]], dtype=np.int64).reshape(-1, 3)
            costs = np.array([[BLOCKED if f is None else float(f) for f in c["F"]] for c in doc["cells"]],
                             dtype=np.float64).reshape(-1, 8)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFile(f"bad field document: {exc}") from exc
        reasons = np.where(np.isfinite(costs), REASON_OK, -1).astype(np.int8)
        return cls(ids, costs, reasons, np.full(costs.shape, np.nan))

    def colors(self, max_cost: float) -> np.ndarray:
        """Green where every heading is cheap, black where headings are blocked."""
        norm = np.where(np.isfinite(self.costs), self.costs / max(max_cost, 1e-12), 1.0)
        t = np.clip(norm.mean(axis=1), 0.0, 1.0)
        return np.column_stack([np.zeros_like(t), 255 * (1 - t), np.zeros_like(t)]).astype(np.uint8)


def compute_field(m: MLSkiMap, vehicle: VehicleModel, config: TraversabilityConfig | None = None,
                  backend=None) -> TraversabilityField:
    """Cost of all eight headings for every surface voxel."""
    config = config or TraversabilityConfig()
    n_lvl = m.n_levels
    if n_lvl == 0:
        empty = np.zeros((0, 8))
        return TraversabilityField(np.zeros((0, 3), dtype=np.int64), empty,
                                   empty.astype(np.int8), empty)
    pose_lvl = np.repeat(np.arange(n_lvl), 8)
    headings = np.tile(np.arange(8), n_lvl)
    rot = (headings - 2) % 8
    cost, reason, tilt = _kernels.pose_sweep(sweep_inputs(m, vehicle, config), pose_lvl, rot,
                                             backend=backend)
    return TraversabilityField(m.level_ids(), cost.reshape(n_lvl, 8), reason.reshape(n_lvl, 8),
                               tilt.reshape(n_lvl, 8))
