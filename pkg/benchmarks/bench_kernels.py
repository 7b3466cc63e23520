"""Time the numba kernels against the pure-numpy fallback on a synthetic scene.

    python3 benchmarks/bench_kernels.py [--scene desk] [--repeat 3]

Set WTGPLAN_DISABLE_NUMBA=1 to check that the fallback runs alone; this
script always calls both backends explicitly.
"""
import argparse
import time

import numpy as np

from wtgplan import _kernels
from wtgplan.ml_skimap import MapConfig, build_map
from wtgplan.scenegen import SceneSpec, generate
from wtgplan.traversability import TraversabilityConfig, VehicleModel, sweep_inputs


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scene", default="desk")
    ap.add_argument("--density", type=float, default=3600.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cloud, _ = generate(SceneSpec(args.scene, density=args.density, seed=0, noise=0.002))
    m = build_map(cloud, MapConfig(0.1, 0.3))
    vehicle = VehicleModel(0.235, 0.175, 0.12, 0.09, np.radians(30))
    inputs = sweep_inputs(m, vehicle, TraversabilityConfig())
    lvl = np.repeat(np.arange(m.n_levels), 8)
    rot = np.tile(np.arange(8), m.n_levels)
    print(f"scene={args.scene} points={m.n_points} voxels={m.n_voxels} poses={len(lvl)}")
    if not _kernels.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return

    # first call compiles (or loads the on-disk cache); keep it out of the timings
    _kernels.segment_covariance(m.points, m.vox_start, backend="numba")
    _kernels.pose_sweep(inputs, lvl[:8], rot[:8], backend="numba")

    rows = []
    for name, call in (
        ("segment_covariance", lambda b: _kernels.segment_covariance(m.points, m.vox_start, backend=b)),
        ("pose_sweep", lambda b: _kernels.pose_sweep(inputs, lvl, rot, backend=b)),
    ):
        t_nb, out_nb = best_of(lambda: call("numba"), args.repeat)
        t_np, out_np = best_of(lambda: call("numpy"), args.repeat)
        a = out_nb if isinstance(out_nb, tuple) else (out_nb,)
        b = out_np if isinstance(out_np, tuple) else (out_np,)
        agree = all(np.allclose(x, y, rtol=1e-9, atol=1e-12, equal_nan=True) for x, y in zip(a, b))
        rows.append((name, t_nb, t_np, agree))

    print(f"{'kernel':<20}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  agree")
    for name, t_nb, t_np, agree in rows:
        print(f"{name:<20}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
