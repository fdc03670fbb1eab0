"""Backend equivalence: the compiled kernels against the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from meshdistill import _kernels
from meshdistill._kernels import _numpy_impl
from meshdistill.mc_tables import TRI_TABLE

fast = pytest.importorskip("meshdistill._kernels._fast",
                           reason="compiled kernel extension not built")


def test_backend_names():
    assert _numpy_impl.BACKEND == "numpy"
    assert fast.BACKEND == "cython"
    assert _kernels.BACKEND in ("numpy", "cython")


def test_force_numpy_env_selects_fallback():
    code = ("import meshdistill._kernels as k; print(k.BACKEND)")
    env = dict(os.environ, MESHDISTILL_FORCE_NUMPY="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env.pop("MESHDISTILL_FORCE_NUMPY")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.stdout.strip() == "cython"


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_trilerp_gather_matches(dtype):
    rng = np.random.default_rng(0)
    table = rng.normal(size=(64, 4)).astype(dtype)
    idx = rng.integers(0, 64, size=(200, 8)).astype(np.int64)
    w = rng.dirichlet(np.ones(8), size=200)
    a = _numpy_impl.trilerp_gather(table, idx, w)
    b = np.asarray(fast.trilerp_gather(table, idx, w))
    assert b.dtype == dtype
    np.testing.assert_allclose(a, b, rtol=0,
                               atol=1e-6 if dtype == np.float32 else 1e-14)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_trilerp_scatter_matches(dtype):
    rng = np.random.default_rng(1)
    idx = rng.integers(0, 32, size=(150, 8)).astype(np.int64)
    w = rng.dirichlet(np.ones(8), size=150)
    gout = rng.normal(size=(150, 3)).astype(dtype)
    grad_a = np.zeros((32, 3), dtype=dtype)
    grad_b = np.zeros((32, 3), dtype=dtype)
    _numpy_impl.trilerp_scatter(grad_a, idx, w, gout)
    fast.trilerp_scatter(grad_b, idx, w, gout)
    np.testing.assert_allclose(grad_a, np.asarray(grad_b), rtol=0,
                               atol=1e-5 if dtype == np.float32 else 1e-13)


def test_hash_corners_matches():
    rng = np.random.default_rng(6)
    x01 = rng.uniform(-0.05, 1.05, size=(500, 3))  # includes clamp region
    resolutions = np.array([4, 7, 16, 33, 64], dtype=np.int64)
    table_size = 4096  # levels 4 and 7 dense, the rest hashed
    idx_a, w_a = _numpy_impl.hash_corners(x01, resolutions, table_size)
    idx_b, w_b = fast.hash_corners(x01, resolutions, table_size)
    np.testing.assert_array_equal(idx_a, np.asarray(idx_b))
    np.testing.assert_allclose(w_a, np.asarray(w_b), rtol=0, atol=1e-15)
    assert idx_a.shape == (500 * 5, 8)
    assert (idx_a >= 0).all() and (idx_a < 5 * table_size).all()
    np.testing.assert_allclose(w_a.sum(axis=1), 1.0, atol=1e-12)


def test_composite_matches():
    rng = np.random.default_rng(2)
    tau = rng.exponential(0.5, size=(300, 48))
    tau[::7, :3] = 0.0           # transparent leading samples
    tau[::11, 5] = 50.0          # quickly saturating rays
    alpha_a, tend_a = _numpy_impl.composite(tau)
    alpha_b, tend_b = fast.composite(tau)
    np.testing.assert_allclose(alpha_a, np.asarray(alpha_b), atol=1e-14)
    np.testing.assert_allclose(tend_a, np.asarray(tend_b), atol=1e-14)
    np.testing.assert_allclose(alpha_a.sum(1) + tend_a, 1.0, atol=1e-12)


def test_mc_collect_matches_exactly():
    x = np.linspace(-1, 1, 24)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"))
    values = np.linalg.norm(g, axis=0) - 0.61
    rng = np.random.default_rng(3)
    values += 0.05 * rng.normal(size=values.shape)  # wrinkle the surface
    keys_a = _numpy_impl.mc_collect(values, 0.0, TRI_TABLE)
    keys_b = np.asarray(fast.mc_collect(values, 0.0, TRI_TABLE))
    assert keys_a.dtype == np.int64
    np.testing.assert_array_equal(keys_a, keys_b)
    assert len(keys_a) > 100  # non-trivial case


def test_mc_collect_empty_matches():
    values = np.ones((4, 4, 4))
    keys_a = _numpy_impl.mc_collect(values, 0.0, TRI_TABLE)
    keys_b = np.asarray(fast.mc_collect(values, 0.0, TRI_TABLE))
    assert keys_a.shape == (0, 3)
    assert keys_b.reshape(-1, 3).shape == (0, 3)


def test_raster_fill_matches():
    rng = np.random.default_rng(4)
    n, w, h = 60, 48, 40
    xy = rng.uniform(-8, 56, size=(n, 3, 2))
    invz = 1.0 / rng.uniform(0.5, 4.0, size=(n, 3))
    id_a, z_a, bar_a = _numpy_impl.raster_fill(xy, invz, w, h, 1e-7)
    id_b, z_b, bar_b = (np.asarray(r) for r in
                        fast.raster_fill(xy, invz, w, h, 1e-7))
    np.testing.assert_array_equal(id_a, id_b)
    covered = id_a >= 0
    assert covered.any()
    np.testing.assert_allclose(z_a[covered], z_b[covered], rtol=1e-12)
    np.testing.assert_allclose(bar_a[covered], bar_b[covered], atol=1e-12)
    assert (id_a[~covered] == -1).all()


def test_raster_fill_degenerate_and_offscreen_match():
    xy = np.array([
        [[1.0, 1.0], [5.0, 1.0], [9.0, 1.0]],        # zero area
        [[-30.0, -30.0], [-20.0, -30.0], [-25.0, -20.0]],  # off screen
        [[2.0, 2.0], [14.0, 2.0], [2.0, 14.0]],      # real one
    ])
    invz = np.ones((3, 3))
    id_a, _, _ = _numpy_impl.raster_fill(xy, invz, 16, 16, 1e-7)
    id_b = np.asarray(fast.raster_fill(xy, invz, 16, 16, 1e-7)[0])
    np.testing.assert_array_equal(id_a, id_b)
    assert set(np.unique(id_a)) == {-1, 2}


def test_dda_mark_matches():
    rng = np.random.default_rng(5)
    n = 400
    origins = rng.uniform(-3, 3, size=(n, 3))
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[::13, 0] = 0.0  # axis-parallel components
    lo = np.full(3, -1.0)
    hi = np.full(3, 1.0)
    safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    ta = (lo - origins) / safe
    tb = (hi - origins) / safe
    t0 = np.maximum(np.minimum(ta, tb).max(axis=1), 0.0)
    t1 = np.maximum(ta, tb).min(axis=1)
    keep = t1 > t0
    origins, dirs, t0, t1 = (np.ascontiguousarray(a[keep])
                             for a in (origins, dirs, t0, t1))
    res = np.array([16, 16, 16], dtype=np.int64)
    out_a = np.zeros((16, 16, 16), dtype=np.uint8)
    out_b = np.zeros((16, 16, 16), dtype=np.uint8)
    _numpy_impl.dda_mark(origins, dirs, t0, t1, lo, hi, res, out_a)
    fast.dda_mark(origins, dirs, t0, t1, lo, hi, res, out_b)
    assert out_a.any()
    np.testing.assert_array_equal(out_a, np.asarray(out_b))


def test_dda_mark_anisotropic_grid_matches():
    origins = np.array([[-2.0, 0.1, 0.2]])
    dirs = np.array([[1.0, 0.05, -0.02]])
    lo = np.array([-1.0, -0.5, -0.25])
    hi = np.array([1.0, 0.5, 0.25])
    safe = dirs.copy()
    ta = (lo - origins) / safe
    tb = (hi - origins) / safe
    t0 = np.maximum(np.minimum(ta, tb).max(axis=1), 0.0)
    t1 = np.maximum(ta, tb).min(axis=1)
    res = np.array([20, 10, 5], dtype=np.int64)
    out_a = np.zeros((20, 10, 5), dtype=np.uint8)
    out_b = np.zeros((20, 10, 5), dtype=np.uint8)
    _numpy_impl.dda_mark(origins, dirs, t0, t1, lo, hi, res, out_a)
    fast.dda_mark(origins, dirs, t0, t1, lo, hi, res, out_b)
    assert out_a.sum() >= 20  # crosses the full x extent
    np.testing.assert_array_equal(out_a, np.asarray(out_b))
