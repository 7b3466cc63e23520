import os
import subprocess
import sys

import numpy as np
import pytest

from wtgplan import _kernels
from wtgplan.ml_skimap import MapConfig, build_map


def run_python(code, **env):
    full = dict(os.environ, **env)
    return subprocess.run([sys.executable, "-c", code], env=full, capture_output=True, text=True,
                          check=True).stdout.strip()


def test_env_flag_selects_numpy():
    code = "from wtgplan import _kernels; print(_kernels.resolve_backend())"
    assert run_python(code, WTGPLAN_DISABLE_NUMBA="1") == "numpy"
    if _kernels.HAVE_NUMBA:
        assert run_python(code, WTGPLAN_DISABLE_NUMBA="") == "numba"


def test_resolve_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.resolve_backend("cuda")
    assert _kernels.resolve_backend("numpy") == "numpy"


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_segment_covariance_backends_agree():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(5000, 3))
    m = build_map(pts, MapConfig(0.5, 1.0))
    a = _kernels.segment_covariance(m.points, m.vox_start, backend="numba")
    b = _kernels.segment_covariance(m.points, m.vox_start, backend="numpy")
    for x, y in zip(a, b):
        assert np.max(np.abs(x - y)) < 1e-12
