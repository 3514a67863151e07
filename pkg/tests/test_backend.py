import os
import subprocess
import sys

import numpy as np
import pytest

from add_distill import backend
from add_distill.geometry import BevBox

compiled = pytest.importorskip("add_distill._kernels")
python = backend.fallback


def test_active_backend_reported():
    assert backend.BACKEND in ("compiled", "python")
    assert backend.get_kernels("python") is python
    with pytest.raises(ValueError):
        backend.get_kernels("gpu")


def test_env_var_forces_fallback():
    code = "from add_distill import backend; print(backend.BACKEND)"
    env = dict(os.environ, ADD_DISTILL_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_matmul_bit_identical():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, k, n = rng.integers(1, 12, size=3)
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        assert compiled.matmul(a, b).tobytes() == python.matmul(a, b).tobytes()


def test_softmax_within_one_ulp():
    # the two exp implementations may round differently in the last place
    rng = np.random.default_rng(1)
    x = 10 * rng.standard_normal((40, 9))
    a, b = compiled.softmax_rows(x), python.softmax_rows(x)
    assert np.all(np.abs(a - b) <= 2 * np.spacing(np.maximum(np.abs(a), np.abs(b))))


def test_hungarian_identical():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        c = rng.integers(0, 5, (n, n)).astype(float)
        ca, cb = compiled.hungarian_square(c), python.hungarian_square(c)
        assert np.array_equal(ca[0], cb[0])
        assert ca[1].tobytes() == cb[1].tobytes() and ca[2].tobytes() == cb[2].tobytes()


def test_polygon_clip_identical():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = BevBox(*rng.uniform(-1, 1, 2), *rng.uniform(0.5, 3, 2), rng.uniform(-3, 3))
        b = BevBox(*rng.uniform(-1, 1, 2), *rng.uniform(0.5, 3, 2), rng.uniform(-3, 3))
        x = compiled.convex_intersection_area(a.corners(), b.corners())
        y = python.convex_intersection_area(a.corners(), b.corners())
        assert x == y
