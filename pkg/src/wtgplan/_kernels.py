"""Hot numeric kernels.

Each kernel exists twice: a numba ``@njit`` loop and a vectorised numpy
version. ``WTGPLAN_DISABLE_NUMBA=1`` (or a missing numba install) selects the
numpy path; callers may also pass ``backend="numpy"`` / ``"numba"``.
Both paths evaluate the same formulas in the same order of operations per
element, so results agree to floating-point rounding.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

REASON_OK = 0
REASON_OCCLUDED = 1
REASON_DEGENERATE = 2
REASON_COLLISION = 3
REASON_TILT = 4

# relative eigenvalue floor below which a footprint is treated as collinear
RANK_EPS = 1e-10

_S = math.sqrt(0.5)
ROT_COS = np.array([1.0, _S, 0.0, -_S, -1.0, -_S, 0.0, _S])
ROT_SIN = np.array([0.0, _S, 1.0, _S, 0.0, -_S, -1.0, -_S])


def numba_disabled() -> bool:
    return os.environ.get("WTGPLAN_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def resolve_backend(backend: str | None = None) -> str:
    if backend is None:
        return "numpy" if (numba_disabled() or not HAVE_NUMBA) else "numba"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return backend


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# segment covariance: one 3x3 covariance about the centroid per voxel

def _segment_covariance_numpy(points, starts):
    counts = np.diff(starts)
    if len(counts) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3, 3))
    first = starts[:-1]
    centroids = np.add.reduceat(points, first, axis=0) / counts[:, None]
    diff = points - np.repeat(centroids, counts, axis=0)
    outer = diff[:, :, None] * diff[:, None, :]
    cov = np.add.reduceat(outer, first, axis=0) / counts[:, None, None]
    return centroids, cov


@_njit
def _segment_covariance_numba(points, starts):
    nseg = starts.shape[0] - 1
    centroids = np.zeros((nseg, 3))
    cov = np.zeros((nseg, 3, 3))
    for s in range(nseg):
        lo = starts[s]
        hi = starts[s + 1]
        n = hi - lo
        for q in range(lo, hi):
            for a in range(3):
                centroids[s, a] += points[q, a]
        for a in range(3):
            centroids[s, a] /= n
        for q in range(lo, hi):
            d0 = points[q, 0] - centroids[s, 0]
            d1 = points[q, 1] - centroids[s, 1]
            d2 = points[q, 2] - centroids[s, 2]
            cov[s, 0, 0] += d0 * d0
            cov[s, 0, 1] += d0 * d1
            cov[s, 0, 2] += d0 * d2
            cov[s, 1, 1] += d1 * d1
            cov[s, 1, 2] += d1 * d2
            cov[s, 2, 2] += d2 * d2
        for a in range(3):
            for b in range(a, 3):
                cov[s, a, b] /= n
                cov[s, b, a] = cov[s, a, b]
    return centroids, cov


def segment_covariance(points, starts, backend=None):
    """Centroid and covariance about it for each run ``points[starts[s]:starts[s+1]]``."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if resolve_backend(backend) == "numba":
        return _segment_covariance_numba(points, starts)
    return _segment_covariance_numpy(points, starts)


# ---------------------------------------------------------------------------
# moments of every level's surface voxel about the voxel center

def surface_moments(points, vox_start, surface_vox, centers):
    """Count, first and second moments of each surface voxel about ``centers``."""
    lo = vox_start[surface_vox]
    cnt = vox_start[surface_vox + 1] - lo
    n_lvl = len(surface_vox)
    rep = np.repeat(np.arange(n_lvl), cnt)
    offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    rel = points[lo[rep] + offs] - centers[rep]
    a = np.zeros((n_lvl, 3))
    np.add.at(a, rep, rel)
    B = np.zeros((n_lvl, 3, 3))
    np.add.at(B, rep, rel[:, :, None] * rel[:, None, :])
    return cnt.astype(np.float64), a, B


# ---------------------------------------------------------------------------
# pose sweep

@_njit
def _find_col(col_key, key):
    pos = np.searchsorted(col_key, key)
    if pos < col_key.shape[0] and col_key[pos] == key:
        return pos
    return -1


@_njit
def _pose_sweep_numba(col_key, col_ij, col_lvl_start, lvl_col, lvl_surface_z, lvl_surface_vox,
                      lvl_center, m_n, m_a, m_B, vox_start, points,
                      pose_lvl, pose_rot, ucell, ucount, case_mask, region, rot_cos, rot_sin,
                      d, ox, oy, c_ref, overhead, W, L, H, max_tilt, j_offset, i_stride):
    P = pose_lvl.shape[0]
    cost = np.full(P, np.inf)
    reason = np.zeros(P, dtype=np.int8)
    tilt = np.full(P, np.nan)
    maxu = ucell.shape[1]
    sel = np.empty(maxu, dtype=np.int64)
    S1 = np.zeros(3)
    S2 = np.zeros((3, 3))
    C = np.zeros((3, 3))
    normals = np.zeros((4, 3))
    qbar = np.zeros((4, 3))
    for p in range(P):
        lv = pose_lvl[p]
        r = pose_rot[p]
        c = lvl_col[lv]
        ci = col_ij[c, 0]
        cj = col_ij[c, 1]
        tx = ox + (ci + 0.5) * d
        ty = oy + (cj + 0.5) * d
        rz = lvl_surface_z[lv]
        occluded = False
        for u in range(ucount[r]):
            key = (ci + ucell[r, u, 0]) * i_stride + (cj + ucell[r, u, 1] + j_offset)
            col = _find_col(col_key, key)
            best = -1
            if col >= 0:
                bestdz = np.inf
                for l2 in range(col_lvl_start[col], col_lvl_start[col + 1]):
                    dz = abs(lvl_surface_z[l2] - rz)
                    if dz <= c_ref and dz < bestdz:
                        best = l2
                        bestdz = dz
            if best < 0:
                occluded = True
                break
            sel[u] = best
        if occluded:
            reason[p] = 1
            continue

        degenerate = False
        alpha_max = 0.0
        for case in range(4):
            N = 0.0
            for a in range(3):
                S1[a] = 0.0
                for b in range(3):
                    S2[a, b] = 0.0
            for u in range(ucount[r]):
                if not case_mask[r, case, u]:
                    continue
                l2 = sel[u]
                n = m_n[l2]
                d0 = lvl_center[l2, 0] - tx
                d1 = lvl_center[l2, 1] - ty
                d2 = lvl_center[l2, 2] - rz
                dl = (d0, d1, d2)
                N += n
                for a in range(3):
                    S1[a] += m_a[l2, a] + n * dl[a]
                for a in range(3):
                    for b in range(3):
                        S2[a, b] += (m_B[l2, a, b] + m_a[l2, a] * dl[b] + dl[a] * m_a[l2, b]
                                     + n * dl[a] * dl[b])
            if N < 3.0:
                degenerate = True
                break
            for a in range(3):
                for b in range(3):
                    C[a, b] = S2[a, b] / N - (S1[a] / N) * (S1[b] / N)
            w, V = np.linalg.eigh(C)
            if not (w[2] > 0.0) or w[1] <= RANK_EPS * w[2]:
                degenerate = True
                break
            sgn = 1.0 if V[2, 0] >= 0.0 else -1.0
            for a in range(3):
                normals[case, a] = sgn * V[a, 0]
            qbar[case, 0] = tx + S1[0] / N
            qbar[case, 1] = ty + S1[1] / N
            qbar[case, 2] = rz + S1[2] / N
            nz = normals[case, 2]
            if nz > 1.0:
                nz = 1.0
            alpha = math.acos(nz)
            if alpha > alpha_max:
                alpha_max = alpha
        if degenerate:
            reason[p] = 2
            continue
        tilt[p] = alpha_max

        cs = rot_cos[r]
        sn = rot_sin[r]
        limit = rz + overhead
        collided = False
        for q in range(region.shape[0]):
            key = (ci + region[q, 0]) * i_stride + (cj + region[q, 1] + j_offset)
            col = _find_col(col_key, key)
            if col < 0:
                continue
            best = -1
            for l2 in range(col_lvl_start[col], col_lvl_start[col + 1]):
                if lvl_surface_z[l2] <= limit:
                    best = l2
            if best < 0:
                continue
            v = lvl_surface_vox[best]
            for t in range(vox_start[v], vox_start[v + 1]):
                dx = points[t, 0] - tx
                dy = points[t, 1] - ty
                lx = cs * dx + sn * dy
                ly = -sn * dx + cs * dy
                if abs(lx) <= W and abs(ly) <= L:
                    for case in range(4):
                        s = (normals[case, 0] * (points[t, 0] - qbar[case, 0])
                             + normals[case, 1] * (points[t, 1] - qbar[case, 1])
                             + normals[case, 2] * (points[t, 2] - qbar[case, 2]))
                        if s > H:
                            collided = True
                            break
                if collided:
                    break
            if collided:
                break
        if collided:
            reason[p] = 3
            continue
        if alpha_max > max_tilt:
            reason[p] = 4
            continue
        cost[p] = math.tan(alpha_max)
    return cost, reason, tilt


def _lookup_np(col_key, ci, cj, j_offset, i_stride):
    keys = ci * i_stride + (cj + j_offset)
    if len(col_key) == 0:
        return np.full(keys.shape, -1, dtype=np.int64)
    pos = np.minimum(np.searchsorted(col_key, keys), len(col_key) - 1)
    return np.where(col_key[pos] == keys, pos, -1)


def _level_candidates(col_lvl_start, cols):
    ok = cols >= 0
    safe = np.where(ok, cols, 0)
    start = col_lvl_start[safe]
    cnt = np.where(ok, col_lvl_start[safe + 1] - start, 0)
    return start, cnt


def _sweep_chunk_numpy(ctx, chunk, r):
    (col_key, col_ij, col_lvl_start, lvl_col, lvl_surface_z, lvl_surface_vox, lvl_center,
     m_n, m_a, m_B, vox_start, points, ucell, ucount, case_mask, region, d, ox, oy,
     c_ref, overhead, W, L, H, max_tilt, j_offset, i_stride, max_levels, pose_lvl) = ctx
    B = len(chunk)
    cost = np.full(B, np.inf)
    reason = np.zeros(B, dtype=np.int8)
    tilt = np.full(B, np.nan)

    lv = pose_lvl[chunk]
    c = lvl_col[lv]
    ci = col_ij[c, 0]
    cj = col_ij[c, 1]
    tx = ox + (ci + 0.5) * d
    ty = oy + (cj + 0.5) * d
    rz = lvl_surface_z[lv]

    U = ucount[r]
    offs = ucell[r, :U]
    cols = _lookup_np(col_key, ci[:, None] + offs[None, :, 0], cj[:, None] + offs[None, :, 1],
                      j_offset, i_stride)
    start, cnt = _level_candidates(col_lvl_start, cols)
    sel = np.full(cols.shape, -1, dtype=np.int64)
    bestdz = np.full(cols.shape, np.inf)
    for m in range(max_levels):
        has = cnt > m
        l2 = np.where(has, start + m, 0)
        dz = np.abs(lvl_surface_z[l2] - rz[:, None])
        better = has & (dz <= c_ref) & (dz < bestdz)
        sel = np.where(better, l2, sel)
        bestdz = np.where(better, dz, bestdz)
    occluded = (sel < 0).any(axis=1)
    reason[occluded] = REASON_OCCLUDED
    live = np.flatnonzero(~occluded)
    if len(live) == 0:
        return cost, reason, tilt

    sel = sel[live]
    tx, ty, rz, ci, cj = tx[live], ty[live], rz[live], ci[live], cj[live]
    n = m_n[sel]
    a = m_a[sel]
    Bm = m_B[sel]
    dl = lvl_center[sel] - np.stack([tx, ty, rz], axis=1)[:, None, :]
    S1u = a + n[..., None] * dl
    S2u = (Bm + a[..., :, None] * dl[..., None, :] + dl[..., :, None] * a[..., None, :]
           + n[..., None, None] * dl[..., :, None] * dl[..., None, :])
    masks = case_mask[r, :, :U]
    N = np.stack([n[:, mk].sum(axis=1) for mk in masks], axis=1)            # (b, 4)
    S1 = np.stack([S1u[:, mk].sum(axis=1) for mk in masks], axis=1)         # (b, 4, 3)
    S2 = np.stack([S2u[:, mk].sum(axis=1) for mk in masks], axis=1)         # (b, 4, 3, 3)
    degenerate = (N < 3.0).any(axis=1)
    Nsafe = np.where(N < 3.0, 1.0, N)
    mu = S1 / Nsafe[..., None]
    C = S2 / Nsafe[..., None, None] - mu[..., :, None] * mu[..., None, :]
    w, V = np.linalg.eigh(C)
    degenerate |= ((~(w[..., 2] > 0.0)) | (w[..., 1] <= RANK_EPS * w[..., 2])).any(axis=1)
    normals = V[..., :, 0]
    normals = normals * np.where(normals[..., 2:3] >= 0.0, 1.0, -1.0)
    alpha = np.arccos(np.minimum(normals[..., 2], 1.0))
    alpha_max = np.maximum(alpha.max(axis=1), 0.0)
    qbar = np.stack([tx, ty, rz], axis=1)[:, None, :] + mu

    out_reason = np.zeros(len(live), dtype=np.int8)
    out_reason[degenerate] = REASON_DEGENERATE
    ok = ~degenerate

    # chassis collision over the wheel-center rectangle
    cs, sn = ROT_COS[r], ROT_SIN[r]
    rcols = _lookup_np(col_key, ci[:, None] + region[None, :, 0], cj[:, None] + region[None, :, 1],
                       j_offset, i_stride)
    start, cnt = _level_candidates(col_lvl_start, rcols)
    rsel = np.full(rcols.shape, -1, dtype=np.int64)
    limit = rz + overhead
    for m in range(max_levels):
        has = cnt > m
        l2 = np.where(has, start + m, 0)
        below = has & (lvl_surface_z[l2] <= limit[:, None])
        rsel = np.where(below, l2, rsel)
    rsel[~ok] = -1
    pb, pq = np.nonzero(rsel >= 0)
    collided = np.zeros(len(live), dtype=bool)
    if len(pb):
        vox = lvl_surface_vox[rsel[pb, pq]]
        lo = vox_start[vox]
        k = vox_start[vox + 1] - lo
        rep = np.repeat(np.arange(len(pb)), k)
        idx = lo[rep] + (np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k))
        pts = points[idx]
        b = pb[rep]
        dx = pts[:, 0] - tx[b]
        dy = pts[:, 1] - ty[b]
        lx = cs * dx + sn * dy
        ly = -sn * dx + cs * dy
        inside = (np.abs(lx) <= W) & (np.abs(ly) <= L)
        pts, b = pts[inside], b[inside]
        for case in range(4):
            nrm = normals[b, case]
            q = qbar[b, case]
            s = (nrm[:, 0] * (pts[:, 0] - q[:, 0]) + nrm[:, 1] * (pts[:, 1] - q[:, 1])
                 + nrm[:, 2] * (pts[:, 2] - q[:, 2]))
            hit = b[s > H]
            collided[hit] = True
    collided &= ok
    out_reason[collided] = REASON_COLLISION
    over = ok & ~collided & (alpha_max > max_tilt)
    out_reason[over] = REASON_TILT
    good = out_reason == REASON_OK

    reason[live] = out_reason
    t = np.full(len(live), np.nan)
    t[ok] = alpha_max[ok]
    tilt[live] = t
    cc = np.full(len(live), np.inf)
    cc[good] = np.tan(alpha_max[good])
    cost[live] = cc
    return cost, reason, tilt


def pose_sweep(inputs: dict, pose_lvl, pose_rot, backend=None, chunk: int = 256):
    """Evaluate every (level, rotation) pose; returns cost, reason code and max tilt."""
    pose_lvl = np.ascontiguousarray(pose_lvl, dtype=np.int64)
    pose_rot = np.ascontiguousarray(pose_rot, dtype=np.int64)
    g = inputs
    args = (g["col_key"], g["col_ij"], g["col_lvl_start"], g["lvl_col"], g["lvl_surface_z"],
            g["lvl_surface_vox"], g["lvl_center"], g["m_n"], g["m_a"], g["m_B"], g["vox_start"],
            g["points"])
    geo = (g["ucell"], g["ucount"], g["case_mask"], g["region"])
    scalars = (float(g["d"]), float(g["ox"]), float(g["oy"]), float(g["c_ref"]),
               float(g["overhead"]), float(g["W"]), float(g["L"]), float(g["H"]),
               float(g["max_tilt"]), int(g["j_offset"]), int(g["i_stride"]))
    if len(pose_lvl) == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int8), np.zeros(0)
    if resolve_backend(backend) == "numba":
        return _pose_sweep_numba(*args, pose_lvl, pose_rot, *geo, ROT_COS, ROT_SIN, *scalars)
    ctx = args + geo + scalars + (int(g["max_levels"]), pose_lvl)
    cost = np.full(len(pose_lvl), np.inf)
    reason = np.zeros(len(pose_lvl), dtype=np.int8)
    tilt = np.full(len(pose_lvl), np.nan)
    for r in range(8):
        idx = np.flatnonzero(pose_rot == r)
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            cost[part], reason[part], tilt[part] = _sweep_chunk_numpy(ctx, part, r)
    return cost, reason, tilt
