"""Pure-numpy implementations of the hot kernels.

These are the fallback backend used when the compiled extension is not
available (see ``meshdistill._kernels``).  Each function here has a compiled
twin in ``_fast.pyx`` with identical semantics; the test suite checks the two
backends against each other.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def trilerp_gather(table, idx, w):
    """Weighted gather of 8 table rows per sample.

    table: (T, F) float32/float64, idx: (N, 8) int64, w: (N, 8) float64.
    Returns (N, F) in the table dtype.
    """
    gathered = table[idx]  # (N, 8, F)
    out = np.einsum("nkf,nk->nf", gathered, w.astype(table.dtype, copy=False))
    return np.ascontiguousarray(out, dtype=table.dtype)


def trilerp_scatter(grad_table, idx, w, gout):
    """Accumulate gout back into grad_table with trilinear weights (+=)."""
    contrib = gout[:, None, :] * w[:, :, None].astype(grad_table.dtype, copy=False)
    np.add.at(grad_table, idx.reshape(-1), contrib.reshape(-1, grad_table.shape[1]))


_HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint32)
_CORNER_SHIFTS = np.array(
    [[k & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.int64)


def hash_corners(x01, resolutions, table_size):
    """Stacked-table rows and trilinear weights per (point, level).

    x01: (N, 3) float64 in the unit cube, resolutions: (L,) int64.  Levels
    whose (res+1)^3 corners fit in table_size are indexed densely, finer
    ones by the uint32 spatial hash.  Returns (idx (N*L, 8) int64,
    w (N*L, 8) float64), rows ordered point-major (row = point * L + level)
    with each level offset into its own table slab.
    """
    n = x01.shape[0]
    levels = len(resolutions)
    res = resolutions.reshape(levels, 1, 1).astype(np.float64)
    scaled = x01[None] * res  # (L, N, 3)
    c0 = np.floor(scaled).astype(np.int64)
    np.clip(c0, 0, res.astype(np.int64) - 1, out=c0)
    frac = scaled - c0

    side = (resolutions + 1).reshape(levels, 1)
    dense = (side ** 3 <= table_size)
    offs = (np.arange(levels, dtype=np.int64) * table_size).reshape(levels, 1)
    idx = np.empty((levels, n, 8), dtype=np.int64)
    w = np.empty((levels, n, 8), dtype=np.float64)
    for k in range(8):
        corner = c0 + _CORNER_SHIFTS[k]
        rows_dense = ((corner[..., 0] * side + corner[..., 1]) * side
                      + corner[..., 2])
        h = (corner.astype(np.uint32) * _HASH_PRIMES).astype(np.uint32)
        rows_hash = ((h[..., 0] ^ h[..., 1] ^ h[..., 2])
                     & np.uint32(table_size - 1)).astype(np.int64)
        idx[:, :, k] = np.where(dense, rows_dense, rows_hash) + offs
        wk = np.where(_CORNER_SHIFTS[k].astype(bool), frac, 1.0 - frac)
        w[:, :, k] = wk[..., 0] * wk[..., 1] * wk[..., 2]
    return (np.ascontiguousarray(idx.transpose(1, 0, 2).reshape(-1, 8)),
            np.ascontiguousarray(w.transpose(1, 0, 2).reshape(-1, 8)))


def composite(tau):
    """Alpha compositing weights from per-sample optical depths.

    tau: (N, M) float64 of sigma*delta.  Returns (alpha (N, M), t_end (N))
    with the exclusive transmittance convention, so alpha.sum(1) + t_end == 1.
    """
    tau = np.asarray(tau, dtype=np.float64)
    ccs = np.cumsum(tau, axis=1)
    trans = np.exp(-(ccs - tau))  # transmittance before each sample
    alpha = trans * -np.expm1(-tau)
    t_end = np.exp(-ccs[:, -1])
    return alpha, t_end


# Cube corner offsets (x, y, z) in the classic table ordering and, for each of
# the 12 cube edges, the base-corner offset plus the axis the edge runs along.
# An edge is identified globally by key = corner_flat_index * 3 + axis, which
# is what makes vertices shared between neighbouring cells dedup exactly.
CORNER_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=np.int64)
EDGE_BASE = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0],
     [0, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 1],
     [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.int64)
EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)


def mc_collect(values, iso, tri_table):
    """Emit marching-cubes triangles as (F, 3) global edge keys.

    values: (X, Y, Z) float64 corner samples.  Triangles appear in C-order
    cell scan order, and within a cell in lookup-table order, so both backends
    produce identical arrays.
    """
    x, y, z = values.shape
    inside = values < iso  # bit set when corner is inside (value below iso)

    cube_index = np.zeros((x - 1, y - 1, z - 1), dtype=np.int32)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        corner = inside[ox:ox + x - 1, oy:oy + y - 1, oz:oz + z - 1]
        cube_index |= corner.astype(np.int32) << bit

    flat_index = cube_index.reshape(-1)
    active = np.nonzero((flat_index != 0) & (flat_index != 255))[0]
    if active.size == 0:
        return np.zeros((0, 3), dtype=np.int64)

    rows = tri_table[flat_index[active]]  # (A, 16)
    ntri = np.argmax(rows < 0, axis=1) // 3  # rows are -1 padded
    ntri[rows[:, -1] >= 0] = 5

    cell_rep = np.repeat(active, ntri)
    tri_in_cell = _ragged_arange(ntri)
    edges = tri_table[flat_index[cell_rep]]
    tri_edges = edges[np.arange(cell_rep.size)[:, None], tri_in_cell[:, None] * 3 + np.arange(3)]

    # cell coordinates from the flat C-order index over (x-1, y-1, z-1)
    ci = cell_rep // ((y - 1) * (z - 1))
    cj = (cell_rep // (z - 1)) % (y - 1)
    ck = cell_rep % (z - 1)

    base = EDGE_BASE[tri_edges]  # (F, 3, 3)
    axis = EDGE_AXIS[tri_edges]  # (F, 3)
    gi = ci[:, None] + base[:, :, 0]
    gj = cj[:, None] + base[:, :, 1]
    gk = ck[:, None] + base[:, :, 2]
    keys = ((gi * y + gj) * z + gk) * 3 + axis
    return keys.astype(np.int64)


def _ragged_arange(counts):
    """[0..c0-1, 0..c1-1, ...] for an array of counts."""
    total = int(counts.sum())
    out = np.arange(total)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    return out - starts


def raster_fill(xy, invz, width, height, ztol):
    """Z-buffered triangle fill at pixel centers.

    xy: (T, 3, 2) screen coordinates, invz: (T, 3) view-space 1/z.  Returns
    (tri_id (H, W) int64 with -1 for empty, zbuf (H, W), bary (H, W, 3)
    affine screen barycentrics of the winning triangle).  Triangles are
    processed in index order; a later triangle wins only when it is closer
    by more than ztol, which makes ties deterministic.
    """
    tri_id = np.full((height, width), -1, dtype=np.int64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    bary = np.zeros((height, width, 3), dtype=np.float64)

    for t in range(xy.shape[0]):
        ax, ay = xy[t, 0]
        bx, by = xy[t, 1]
        cx, cy = xy[t, 2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        x0 = max(int(np.floor(min(ax, bx, cx) - 0.5)), 0)
        x1 = min(int(np.ceil(max(ax, bx, cx) - 0.5)), width - 1)
        y0 = max(int(np.floor(min(ay, by, cy) - 0.5)), 0)
        y1 = min(int(np.ceil(max(ay, by, cy) - 0.5)), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = np.arange(y0, y1 + 1) + 0.5
        pxg, pyg = np.meshgrid(px, py)
        # w0 is 1 at vertex c, w1 at vertex a, w2 at vertex b
        w0 = ((bx - ax) * (pyg - ay) - (by - ay) * (pxg - ax)) / area
        w1 = ((cx - bx) * (pyg - by) - (cy - by) * (pxg - bx)) / area
        w2 = 1.0 - w0 - w1
        lam = np.stack([w1, w2, w0], axis=-1)  # weights for vertices a, b, c
        covered = (lam >= 0.0).all(axis=-1)
        if not covered.any():
            continue
        inv = lam @ invz[t]
        with np.errstate(divide="ignore"):
            z = 1.0 / inv  # uncovered bbox pixels may hit inv == 0
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        win = covered & (z < zbuf[sub] - ztol)
        if not win.any():
            continue
        tri_id[sub][win] = t
        zbuf[sub][win] = z[win]
        bary[sub][win] = lam[win]
    return tri_id, zbuf, bary


def dda_mark(origins, dirs, t0, t1, lo, hi, res, out):
    """Mark every voxel traversed by each ray segment (Amanatides-Woo).

    Rays are stepped in lockstep with vectorized updates; the visit set is
    identical to the per-ray compiled walk.
    """
    n = origins.shape[0]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    res = np.asarray(res, dtype=np.int64)
    vox = (hi - lo) / res

    t0 = np.asarray(t0, dtype=np.float64).copy()
    t1 = np.asarray(t1, dtype=np.float64)
    alive = t0 < t1
    start = origins + dirs * t0[:, None]
    cell = np.floor((start - lo) / vox).astype(np.int64)
    np.clip(cell, 0, res - 1, out=cell)

    step = np.where(dirs > 0, 1, -1).astype(np.int64)
    safe = np.where(dirs == 0.0, 1e-300, dirs)
    next_bound = lo + (cell + (step > 0)) * vox
    tmax = np.where(dirs == 0.0, np.inf, (next_bound - origins) / safe)
    tdelta = np.where(dirs == 0.0, np.inf, np.abs(vox / safe))

    max_iter = int(res.sum()) + 3
    for _ in range(max_iter):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        c = cell[idx]
        out[c[:, 0], c[:, 1], c[:, 2]] = 1
        ax = np.argmin(tmax[idx], axis=1)
        rows = (idx, ax)
        t_next = tmax[rows]
        cell[rows] += step[rows]
        tmax[rows] += tdelta[rows]
        oob = (cell[idx, ax] < 0) | (cell[idx, ax] >= res[ax])
        alive[idx] = (t_next < t1[idx]) & ~oob
