"""Deterministic synthetic terrain for tests and demos.

Every generator samples surfaces with a jittered grid (one point per grid
cell, uniformly placed inside it), adds Gaussian jitter along the surface
normal clipped to three sigma, and returns the analytic ground truth
alongside the cloud.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .pointcloud_io import PointCloud

KINDS = ("flat", "ramp", "step", "desk", "hole", "rocks", "bridge", "garage", "plateau")


@dataclass
class SceneSpec:
    kind: str
    density: float = 400.0  # points per m^2 of surface
    noise: float = 0.0      # sigma in meters
    seed: int = 0
    params: dict = field(default_factory=dict)

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown scene kind {self.kind!r}")
        if not self.density > 0:
            raise InvalidSpec("density must be positive")
        if self.noise < 0:
            raise InvalidSpec("noise must be non-negative")
        for key, value in self.params.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and key not in _SIGNED:
                if not value > 0:
                    raise InvalidSpec(f"parameter {key} must be positive")


_SIGNED = {"x", "y", "cx", "cy", "deck", "rocks", "channel_depth"}


class _Sampler:
    def __init__(self, spec: SceneSpec):
        self.rng = np.random.default_rng(spec.seed)
        self.spacing = 1.0 / math.sqrt(spec.density)
        self.sigma = spec.noise
        self.parts: list[np.ndarray] = []

    def jitter(self, n: int) -> np.ndarray:
        if self.sigma == 0:
            return np.zeros(n)
        return np.clip(self.rng.normal(0.0, self.sigma, n), -3 * self.sigma, 3 * self.sigma)

    def grid(self, u0, u1, v0, v1, exclude=None):
        nu = max(1, int(round((u1 - u0) / self.spacing)))
        nv = max(1, int(round((v1 - v0) / self.spacing)))
        iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
        ju = self.rng.random(iu.shape)
        jv = self.rng.random(iv.shape)
        u = u0 + (iu + ju).ravel() * (u1 - u0) / nu
        v = v0 + (iv + jv).ravel() * (v1 - v0) / nv
        if exclude is not None:
            keep = ~exclude(u, v)
            u, v = u[keep], v[keep]
        return u, v

    def horizontal(self, x0, x1, y0, y1, z, exclude=None):
        x, y = self.grid(x0, x1, y0, y1, exclude)
        self.parts.append(np.column_stack([x, y, z + self.jitter(len(x))]))

    def slope_x(self, x0, x1, y0, y1, z0, z1):
        """Plane rising linearly in x from z0 at x0 to z1 at x1, sampled per unit surface area."""
        length = math.hypot(x1 - x0, z1 - z0)
        s, y = self.grid(0.0, length, y0, y1)
        t = s / length
        x = x0 + t * (x1 - x0)
        z = z0 + t * (z1 - z0)
        n = np.array([-(z1 - z0), 0.0, x1 - x0]) / length
        if n[2] < 0:
            n = -n
        e = self.jitter(len(x))
        self.parts.append(np.column_stack([x + e * n[0], y, z + e * n[2]]))

    def wall_x(self, x, y0, y1, z0, z1):
        y, z = self.grid(y0, y1, z0, z1)
        self.parts.append(np.column_stack([x + self.jitter(len(y)), y, z]))

    def wall_y(self, y, x0, x1, z0, z1):
        x, z = self.grid(x0, x1, z0, z1)
        self.parts.append(np.column_stack([x, y + self.jitter(len(x)), z]))

    def cylinder(self, cx, cy, r, z0, z1):
        circ = 2 * math.pi * r
        a, z = self.grid(0.0, circ, z0, z1)
        th = a / r
        rr = r + self.jitter(len(a))
        self.parts.append(np.column_stack([cx + rr * np.cos(th), cy + rr * np.sin(th), z]))

    def cone(self, cx, cy, base, apex):
        # sampled in plan view, then lifted; the apex is always present
        x, y = self.grid(cx - base, cx + base, cy - base, cy + base,
                         exclude=lambda u, v: np.hypot(u - cx, v - cy) > base)
        rho = np.hypot(x - cx, y - cy)
        z = apex * (1 - rho / base)
        self.parts.append(np.column_stack([x, y, z + self.jitter(len(x))]))
        self.parts.append(np.array([[cx, cy, apex]]))

    def cloud(self) -> PointCloud:
        return PointCloud(np.vstack(self.parts))


def _p(spec: SceneSpec, key: str, default):
    return spec.params.get(key, default)


def _flat(spec, s):
    ex, ey = _p(spec, "extent_x", 10.0), _p(spec, "extent_y", 10.0)
    s.horizontal(0, ex, 0, ey, 0.0)
    return {"floor": {"rect": [0, ex, 0, ey], "z": 0.0, "normal": [0, 0, 1]}}


def _ramp(spec, s):
    ang = math.radians(_p(spec, "angle_deg", 20.0))
    width = _p(spec, "width", 3.0)
    lower, run, upper = _p(spec, "lower", 1.5), _p(spec, "run", 2.0), _p(spec, "upper", 1.5)
    h = run * math.tan(ang)
    x0, x1 = lower, lower + run
    s.horizontal(0, x0, 0, width, 0.0)
    s.slope_x(x0, x1, 0, width, 0.0, h)
    s.horizontal(x1, x1 + upper, 0, width, h)
    return {"ramp": {"rect": [x0, x1, 0, width], "angle_deg": math.degrees(ang), "height": h,
                     "normal": [-math.sin(ang), 0.0, math.cos(ang)]},
            "floor": {"rect": [0, x0, 0, width], "z": 0.0},
            "landing": {"rect": [x1, x1 + upper, 0, width], "z": h}}


def _step(spec, s):
    h = _p(spec, "height", 0.1)
    ex, ey = _p(spec, "extent_x", 4.0), _p(spec, "extent_y", 3.0)
    xs = _p(spec, "x", ex / 2)
    s.horizontal(0, xs, 0, ey, 0.0)
    s.horizontal(xs, ex, 0, ey, h)
    s.wall_x(xs, 0, ey, 0.0, h)
    return {"step": {"x": xs, "height": h},
            "low": {"rect": [0, xs, 0, ey], "z": 0.0}, "high": {"rect": [xs, ex, 0, ey], "z": h}}


def _desk(spec, s):
    ex, ey = _p(spec, "extent_x", 4.0), _p(spec, "extent_y", 4.0)
    dx0, dx1, dy0, dy1 = _p(spec, "desk_rect", [1.5, 2.5, 1.6, 2.4])
    dh = _p(spec, "desk_height", 0.75)
    # faces sit just inside 0.1 m cell boundaries so every convex box edge cuts its voxels evenly
    bx0, bx1, by0, by1 = _p(spec, "box_rect", [0.61, 1.09, 0.61, 1.09])
    bh = _p(spec, "box_height", 0.29)
    leg_r = _p(spec, "leg_radius", 0.02)

    def under_box(u, v):
        return (u > bx0) & (u < bx1) & (v > by0) & (v < by1)

    s.horizontal(0, ex, 0, ey, 0.0, exclude=under_box)
    s.horizontal(dx0, dx1, dy0, dy1, dh)
    inset = 0.05
    for lx in (dx0 + inset, dx1 - inset):
        for ly in (dy0 + inset, dy1 - inset):
            s.cylinder(lx, ly, leg_r, 0.0, dh)
    s.horizontal(bx0, bx1, by0, by1, bh)
    s.wall_x(bx0, by0, by1, 0.0, bh)
    s.wall_x(bx1, by0, by1, 0.0, bh)
    s.wall_y(by0, bx0, bx1, 0.0, bh)
    s.wall_y(by1, bx0, bx1, 0.0, bh)
    return {"floor": {"rect": [0, ex, 0, ey], "z": 0.0},
            "desk": {"rect": [dx0, dx1, dy0, dy1], "z": dh},
            "box": {"rect": [bx0, bx1, by0, by1], "height": bh}}


def _hole(spec, s):
    ex, ey = _p(spec, "extent_x", 3.0), _p(spec, "extent_y", 3.0)
    size = _p(spec, "size", 0.2)
    cx, cy = _p(spec, "cx", ex / 2), _p(spec, "cy", ey / 2)
    hx0, hx1, hy0, hy1 = cx - size / 2, cx + size / 2, cy - size / 2, cy + size / 2
    s.horizontal(0, ex, 0, ey, 0.0,
                 exclude=lambda u, v: (u >= hx0) & (u < hx1) & (v >= hy0) & (v < hy1))
    return {"floor": {"rect": [0, ex, 0, ey], "z": 0.0}, "hole": {"rect": [hx0, hx1, hy0, hy1]}}


def _rocks(spec, s):
    ex, ey = _p(spec, "extent_x", 3.0), _p(spec, "extent_y", 3.0)
    base = _p(spec, "base_radius", 0.04)
    apex = _p(spec, "apex", 0.1)
    n = int(_p(spec, "rocks", 0))
    s.horizontal(0, ex, 0, ey, 0.0)
    rocks = []
    if n <= 0:
        rocks.append((_p(spec, "cx", ex / 2), _p(spec, "cy", ey / 2), apex))
    else:
        for _ in range(n):
            rocks.append((float(s.rng.uniform(0.5, ex - 0.5)), float(s.rng.uniform(0.5, ey - 0.5)),
                          float(s.rng.uniform(0.3, 1.0) * apex)))
    for cx, cy, a in rocks:
        s.cone(cx, cy, base, a)
    return {"floor": {"rect": [0, ex, 0, ey], "z": 0.0},
            "rocks": [{"center": [cx, cy], "apex": a, "base_radius": base} for cx, cy, a in rocks]}


def _bridge(spec, s):
    bank, span, ey = _p(spec, "bank", 3.0), _p(spec, "span", 2.0), _p(spec, "extent_y", 4.0)
    depth = _p(spec, "channel_depth", 3.0)
    dy0, dy1 = _p(spec, "deck_y", [1.5, 2.5])
    deck = bool(_p(spec, "deck", 1))
    x0, x1 = bank, bank + span
    s.horizontal(0, x0, 0, ey, 0.0)
    s.horizontal(x1, x1 + bank, 0, ey, 0.0)
    s.horizontal(x0, x1, 0, ey, -depth)
    s.wall_x(x0, 0, ey, -depth, 0.0)
    s.wall_x(x1, 0, ey, -depth, 0.0)
    truth = {"banks": [[0, x0, 0, ey], [x1, x1 + bank, 0, ey]], "z": 0.0,
             "channel": {"rect": [x0, x1, 0, ey], "z": -depth}, "deck": None}
    if deck:
        s.horizontal(x0, x1, dy0, dy1, 0.0)
        truth["deck"] = {"rect": [x0, x1, dy0, dy1], "z": 0.0}
    return truth


def _garage(spec, s):
    length, ey = _p(spec, "length", 10.0), _p(spec, "extent_y", 4.0)
    upper_x = _p(spec, "upper_length", 4.0)
    rise = _p(spec, "floor_height", 1.0)
    run = _p(spec, "ramp_run", 4.0)
    rw = _p(spec, "ramp_width", 1.4)
    s.horizontal(0, length, 0, ey, 0.0)
    s.horizontal(0, upper_x, 0, ey, rise)
    # ramp climbs towards -x so its top meets the upper floor edge
    s.slope_x(upper_x + run, upper_x, 0, rw, 0.0, rise)
    return {"ground": {"rect": [0, length, 0, ey], "z": 0.0},
            "upper": {"rect": [0, upper_x, 0, ey], "z": rise},
            "ramp": {"rect": [upper_x, upper_x + run, 0, rw],
                     "angle_deg": math.degrees(math.atan2(rise, run))}}


def _plateau(spec, s):
    ex, ey = _p(spec, "extent_x", 4.0), _p(spec, "extent_y", 4.0)
    gap = _p(spec, "gap", 1.0)
    ux0, ux1, uy0, uy1 = _p(spec, "upper_rect", [1.0, 3.0, 1.0, 3.0])
    s.horizontal(0, ex, 0, ey, 0.0)
    s.horizontal(ux0, ux1, uy0, uy1, gap)
    return {"lower": {"rect": [0, ex, 0, ey], "z": 0.0}, "upper": {"rect": [ux0, ux1, uy0, uy1], "z": gap}}


_BUILDERS = {"flat": _flat, "ramp": _ramp, "step": _step, "desk": _desk, "hole": _hole,
             "rocks": _rocks, "bridge": _bridge, "garage": _garage, "plateau": _plateau}


def generate(spec: SceneSpec) -> tuple[PointCloud, dict]:
    """Sample the scene; returns the cloud and its analytic ground truth."""
    spec.validate()
    sampler = _Sampler(spec)
    truth = _BUILDERS[spec.kind](spec, sampler)
    truth.update({"kind": spec.kind, "seed": spec.seed, "density": spec.density, "noise": spec.noise,
                  "params": dict(spec.params)})
    return sampler.cloud(), truth
