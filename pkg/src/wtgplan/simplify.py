"""Curvature-driven point-cloud slimming.

Each voxel keeps ``N = a * Curv**b + c`` of its points (floored, clamped to
``[1, available]``), where ``Curv`` is the surface variation of the voxel's
points. Flat voxels shrink to a single point; detailed ones keep more.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, EmptyVoxel, NotSymmetric
from .ml_skimap import MLSkiMap


@dataclass(frozen=True)
class SimplifyParams:
    a: float = 900.0
    b: float = 3.0
    c: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ConfigError("simplify parameters a, b, c must all be positive")


@dataclass
class CurvatureResult:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns match eigenvalues
    curvature: float


def voxel_covariance(points, reference=None) -> np.ndarray:
    """Mean outer product of ``points - reference``; the reference defaults to the centroid."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyVoxel("covariance of an empty voxel")
    ref = pts.mean(axis=0) if reference is None else np.asarray(reference, dtype=np.float64)
    diff = pts - ref
    return diff.T @ diff / len(pts)


def eigen3_symmetric(M) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending, clamped at zero) and matching orthonormal eigenvectors."""
    M = np.asarray(M, dtype=np.float64)
    tol = 1e-12 * max(1.0, float(np.abs(M).max()))
    if M.shape != (3, 3) or np.abs(M - M.T).max() > tol:
        raise NotSymmetric("matrix is not 3x3 symmetric")
    w, V = np.linalg.eigh(M)
    w = w[::-1]
    V = V[:, ::-1]
    w = np.where((w < 0) & (w >= -1e-12), 0.0, w)
    return w, V


def curvature_from_eigenvalues(w) -> float:
    total = float(np.sum(w))
    if total <= 0.0:
        return 0.0
    return float(min(max(np.min(w), 0.0) / total, 1.0 / 3.0))


def voxel_curvature(points) -> CurvatureResult:
    w, V = eigen3_symmetric(voxel_covariance(points))
    return CurvatureResult(w, V, curvature_from_eigenvalues(w))


def retention_count(curv: float, params: SimplifyParams, available: int) -> int:
    n = math.floor(params.a * curv ** params.b + params.c)
    return int(min(available, max(1, n)))


def map_curvatures(m: MLSkiMap, backend=None) -> np.ndarray:
    """Surface variation of every voxel, in map voxel order."""
    _, cov = _kernels.segment_covariance(m.points, m.vox_start, backend=backend)
    w = np.linalg.eigvalsh(cov)
    w = np.where((w < 0) & (w >= -1e-12), 0.0, w)
    total = w.sum(axis=1)
    curv = np.where(total > 0, np.maximum(w[:, 0], 0.0) / np.where(total > 0, total, 1.0), 0.0)
    return np.minimum(curv, 1.0 / 3.0)


def retention_counts(curv: np.ndarray, params: SimplifyParams, available: np.ndarray) -> np.ndarray:
    n = np.floor(params.a * curv ** params.b + params.c)
    return np.minimum(available, np.maximum(1, n)).astype(np.int64)


def _voxel_rng(seed: int, i: int, j: int, k: int) -> np.random.Generator:
    # signed indices folded into unsigned words for SeedSequence
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, i & 0xFFFFFFFF, j & 0xFFFFFFFF, k & 0xFFFFFFFF]
    return np.random.default_rng(np.random.SeedSequence(words))


def fisher_yates_prefix(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """First ``m`` entries of a Fisher-Yates shuffle of ``range(n)``."""
    perm = np.arange(n)
    draws = rng.integers(0, n - np.arange(m))
    for t in range(m):
        s = t + int(draws[t])
        perm[t], perm[s] = perm[s], perm[t]
    return perm[:m]


def simplify_map(m: MLSkiMap, params: SimplifyParams, backend=None) -> MLSkiMap:
    """Keep ``retention_count`` seeded-random points per voxel (file order preserved)."""
    counts = m.voxel_counts()
    keep_n = retention_counts(map_curvatures(m, backend=backend), params, counts)
    keep = np.ones(m.n_points, dtype=bool)
    for v in np.flatnonzero(keep_n < counts):
        lo, n = int(m.vox_start[v]), int(counts[v])
        i, j, k = (int(x) for x in m.vox_ijk[v])
        chosen = fisher_yates_prefix(_voxel_rng(params.seed, i, j, k), n, int(keep_n[v]))
        mask = np.zeros(n, dtype=bool)
        mask[chosen] = True
        keep[lo:lo + n] = mask
    return m.with_points(keep)


def curvature_colors(curv: np.ndarray) -> np.ndarray:
    """Blue (flat) to red (curv = 1/3) ramp."""
    t = np.clip(np.asarray(curv) * 3.0, 0.0, 1.0) ** 0.5
    return np.column_stack([255 * t, 64 * (1 - np.abs(2 * t - 1)), 255 * (1 - t)]).astype(np.uint8)
