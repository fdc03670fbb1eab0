"""Volumetric rendering: stratified sampling, compositing, percentile depths.

Compositing uses the exclusive transmittance convention

    T_m = exp(-sum_{m' < m} sigma_{m'} delta_{m'}),   alpha_m = T_m (1 - e^{-sigma_m delta_m}),

so that sum_m alpha_m + T_{M+1} = 1 exactly; per-sample spacings are
delta_m = t_{m+1} - t_m with the final delta_M = t_far - t_M.  Percentile
depth for level k is the truncated sum sum_{m <= M_k} alpha_m t_m where M_k
is the first index at which accumulated opacity reaches k/100; rays that
never reach the threshold get the weighted mean depth and a low-opacity flag.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import _kernels

SCENE_LO = -1.0
SCENE_HI = 1.0


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 (wraparound intended)."""
    with np.errstate(over="ignore"):
        z = (z + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def jitter_uniform(seed: int, ray_ids: np.ndarray, step: int,
                   n_bins: int) -> np.ndarray:
    """Deterministic per-(ray, step, bin) uniforms in [0, 1).

    The stream is a counter hash, so each (seed, ray, step, bin) combination
    yields an independent value regardless of batch composition.
    """
    ray_ids = np.asarray(ray_ids, dtype=np.uint64)[:, None]
    bins = np.arange(n_bins, dtype=np.uint64)[None, :]
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    h = _mix64(np.broadcast_to(z, ray_ids.shape).astype(np.uint64) ^ _mix64(ray_ids))
    h = _mix64(h ^ _mix64(np.uint64(step) + np.uint64(0x51E2D6A9)))
    h = _mix64(h ^ _mix64(bins + np.uint64(0xA5B35705F)))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def ray_box_intersect(origins: np.ndarray, dirs: np.ndarray,
                      lo: float = SCENE_LO, hi: float = SCENE_HI,
                      eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entry/exit distances of rays against the axis-aligned scene box.

    Returns (t0, t1, hit); t0 is clamped at 0 (origins may be inside).
    """
    safe = np.where(np.abs(dirs) < eps, eps, dirs)
    ta = (lo - origins) / safe
    tb = (hi - origins) / safe
    tmin = np.minimum(ta, tb).max(axis=-1)
    tmax = np.maximum(ta, tb).min(axis=-1)
    t0 = np.maximum(tmin, 0.0)
    hit = tmax > t0
    return t0, np.maximum(tmax, t0), hit


def sample_depths(t0: np.ndarray, t1: np.ndarray, n_samples: int,
                  seed: int, ray_ids: np.ndarray, step: int = 0,
                  stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stratified depths t (N, M) and spacings delta (N, M) in [t0, t1]."""
    n = len(t0)
    span = (t1 - t0)[:, None]
    if stratified:
        u = jitter_uniform(seed, ray_ids, step, n_samples)
    else:
        u = np.full((n, n_samples), 0.5)
    t = t0[:, None] + (np.arange(n_samples) + u) / n_samples * span
    delta = np.diff(t, axis=1)
    last = t1[:, None] - t[:, -1:]
    delta = np.concatenate([delta, last], axis=1)
    return t, delta


def composite_alpha(sigma: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(alpha (N, M), residual transmittance T_{M+1} (N,)) in float64."""
    tau = np.ascontiguousarray(sigma * delta, dtype=np.float64)
    return _kernels.composite(tau)


def depth_percentile(alpha: np.ndarray, t: np.ndarray,
                     k: float) -> tuple[np.ndarray, np.ndarray]:
    """Truncated-sum percentile depth per ray.

    alpha, t: (N, M).  Returns (z (N,), low_opacity flag (N,)).  Flagged
    rays get the weighted mean depth instead of the truncated sum.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if alpha.ndim != 2 or alpha.shape[1] == 0:
        raise ValueError("depth_percentile needs at least one sample per ray")
    thr = k / 100.0
    cum = np.cumsum(alpha, axis=1)
    reached = cum >= thr
    flag = ~reached[:, -1]
    m_k = np.argmax(reached, axis=1)  # first index reaching the threshold
    mask = np.arange(alpha.shape[1])[None, :] <= m_k[:, None]
    z = (alpha * t * mask).sum(axis=1)
    total = cum[:, -1]
    mean_depth = (alpha * t).sum(axis=1) / np.maximum(total, 1e-12)
    z = np.where(flag, mean_depth, z)
    return z, flag


def render_rays(sigma_fn: Callable[[np.ndarray], np.ndarray],
                rgb_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
                origins: np.ndarray, dirs: np.ndarray, n_samples: int,
                seed: int = 0, step: int = 0, stratified: bool = True,
                background: float | np.ndarray = 1.0,
                ray_ids: np.ndarray | None = None,
                chunk: int = 65536) -> dict[str, np.ndarray]:
    """March rays through a frozen field.

    Returns a dict with color (if rgb_fn given), alpha, t, t_end (residual
    transmittance), opacity, and hit mask.  Rays missing the scene box get
    zero alpha and background color.
    """
    n = origins.shape[0]
    if ray_ids is None:
        ray_ids = np.arange(n)
    t0, t1, hit = ray_box_intersect(origins, dirs)
    t, delta = sample_depths(t0, t1, n_samples, seed, ray_ids, step, stratified)

    sigma = np.zeros((n, n_samples), dtype=np.float64)
    rgb = None if rgb_fn is None else np.zeros((n, n_samples, 3), dtype=np.float64)
    idx = np.nonzero(hit)[0]
    for lo in range(0, len(idx), max(1, chunk // n_samples)):
        rows = idx[lo:lo + max(1, chunk // n_samples)]
        pts = origins[rows, None, :] + t[rows, :, None] * dirs[rows, None, :]
        flat = pts.reshape(-1, 3)
        sigma[rows] = np.asarray(sigma_fn(flat), dtype=np.float64).reshape(len(rows), n_samples)
        if rgb_fn is not None:
            d_rep = np.repeat(dirs[rows], n_samples, axis=0)
            rgb[rows] = np.asarray(rgb_fn(flat, d_rep), dtype=np.float64).reshape(
                len(rows), n_samples, 3)

    alpha, t_end = composite_alpha(sigma, delta)
    out = {
        "alpha": alpha,
        "t": t,
        "t_end": t_end,
        "opacity": alpha.sum(axis=1),
        "hit": hit,
        "t0": t0,
        "t1": t1,
    }
    if rgb_fn is not None:
        bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
        color = (alpha[:, :, None] * rgb).sum(axis=1) + t_end[:, None] * bg
        out["color"] = np.clip(color, 0.0, 1.0)
    return out


def render_image(sigma_fn, rgb_fn, camera, n_samples: int, seed: int = 0,
                 stratified: bool = False,
                 background: float | np.ndarray = 1.0) -> np.ndarray:
    """Render a full camera view to an (H, W, 3) float image in [0, 1]."""
    origins, dirs = camera.all_rays()
    res = render_rays(sigma_fn, rgb_fn, origins, dirs, n_samples,
                      seed=seed, stratified=stratified, background=background)
    return res["color"].reshape(camera.height, camera.width, 3)
