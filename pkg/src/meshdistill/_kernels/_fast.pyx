# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the kernels in ``_numpy_impl``.

Semantics must stay in lockstep with the numpy versions; the backend
equivalence tests compare outputs element by element.
"""

import numpy as np

cimport numpy as cnp
from cython cimport floating
from libc.math cimport INFINITY, ceil, exp, expm1, fabs, floor

cnp.import_array()

BACKEND = "cython"


def trilerp_gather(floating[:, ::1] table, long long[:, ::1] idx, double[:, ::1] w):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t f = table.shape[1]
    cdef Py_ssize_t i, k, j
    cdef long long row
    cdef double wk
    out_arr = np.zeros((n, f), dtype=np.asarray(table).dtype)
    cdef floating[:, ::1] out = out_arr
    for i in range(n):
        for k in range(8):
            row = idx[i, k]
            wk = w[i, k]
            for j in range(f):
                out[i, j] += <floating> (wk * table[row, j])
    return out_arr


def trilerp_scatter(floating[:, ::1] grad_table, long long[:, ::1] idx,
                    double[:, ::1] w, floating[:, ::1] gout):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t f = grad_table.shape[1]
    cdef Py_ssize_t i, k, j
    cdef long long row
    cdef floating wk
    for i in range(n):
        for k in range(8):
            row = idx[i, k]
            wk = <floating> w[i, k]
            for j in range(f):
                grad_table[row, j] += wk * gout[i, j]


def hash_corners(double[:, ::1] x01, long long[::1] resolutions,
                 long long table_size):
    cdef Py_ssize_t n = x01.shape[0]
    cdef Py_ssize_t levels = resolutions.shape[0]
    idx_arr = np.empty((n * levels, 8), dtype=np.int64)
    w_arr = np.empty((n * levels, 8), dtype=np.float64)
    cdef long long[:, ::1] idx = idx_arr
    cdef double[:, ::1] w = w_arr
    cdef Py_ssize_t i, l, k, row
    cdef long long res, side, cx, cy, cz, gx, gy, gz, key
    cdef double sx, sy, sz, fx, fy, fz, wx, wy, wz
    cdef unsigned int mixed, mask = <unsigned int> (table_size - 1)
    cdef bint dense
    for i in range(n):
        for l in range(levels):
            res = resolutions[l]
            side = res + 1
            dense = side * side * side <= table_size
            sx = x01[i, 0] * res
            sy = x01[i, 1] * res
            sz = x01[i, 2] * res
            cx = <long long> floor(sx)
            cy = <long long> floor(sy)
            cz = <long long> floor(sz)
            if cx < 0: cx = 0
            if cx > res - 1: cx = res - 1
            if cy < 0: cy = 0
            if cy > res - 1: cy = res - 1
            if cz < 0: cz = 0
            if cz > res - 1: cz = res - 1
            fx = sx - cx
            fy = sy - cy
            fz = sz - cz
            row = i * levels + l
            for k in range(8):
                gx = cx + (k & 1)
                gy = cy + ((k >> 1) & 1)
                gz = cz + ((k >> 2) & 1)
                if dense:
                    key = (gx * side + gy) * side + gz
                else:
                    mixed = (<unsigned int> gx) \
                        ^ ((<unsigned int> gy) * <unsigned int> 2654435761u) \
                        ^ ((<unsigned int> gz) * <unsigned int> 805459861u)
                    key = <long long> (mixed & mask)
                idx[row, k] = key + l * table_size
                wx = fx if (k & 1) else 1.0 - fx
                wy = fy if ((k >> 1) & 1) else 1.0 - fy
                wz = fz if ((k >> 2) & 1) else 1.0 - fz
                w[row, k] = wx * wy * wz
    return idx_arr, w_arr


def composite(double[:, ::1] tau):
    cdef Py_ssize_t n = tau.shape[0]
    cdef Py_ssize_t m = tau.shape[1]
    cdef Py_ssize_t i, j
    cdef double cum, trans
    alpha_arr = np.empty((n, m), dtype=np.float64)
    tend_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] tend = tend_arr
    for i in range(n):
        cum = 0.0
        for j in range(m):
            trans = exp(-cum)
            alpha[i, j] = trans * -expm1(-tau[i, j])
            cum += tau[i, j]
        tend[i] = exp(-cum)
    return alpha_arr, tend_arr


# Edge base-corner offsets and axes, matching _numpy_impl.EDGE_BASE/EDGE_AXIS.
cdef long long[12][3] EDGE_BASE
cdef long long[12] EDGE_AXIS
EDGE_BASE[0][:] = [0, 0, 0]; EDGE_AXIS[0] = 0
EDGE_BASE[1][:] = [1, 0, 0]; EDGE_AXIS[1] = 1
EDGE_BASE[2][:] = [0, 1, 0]; EDGE_AXIS[2] = 0
EDGE_BASE[3][:] = [0, 0, 0]; EDGE_AXIS[3] = 1
EDGE_BASE[4][:] = [0, 0, 1]; EDGE_AXIS[4] = 0
EDGE_BASE[5][:] = [1, 0, 1]; EDGE_AXIS[5] = 1
EDGE_BASE[6][:] = [0, 1, 1]; EDGE_AXIS[6] = 0
EDGE_BASE[7][:] = [0, 0, 1]; EDGE_AXIS[7] = 1
EDGE_BASE[8][:] = [0, 0, 0]; EDGE_AXIS[8] = 2
EDGE_BASE[9][:] = [1, 0, 0]; EDGE_AXIS[9] = 2
EDGE_BASE[10][:] = [1, 1, 0]; EDGE_AXIS[10] = 2
EDGE_BASE[11][:] = [0, 1, 0]; EDGE_AXIS[11] = 2

cdef long long[8][3] CORNER_OFF
CORNER_OFF[0][:] = [0, 0, 0]
CORNER_OFF[1][:] = [1, 0, 0]
CORNER_OFF[2][:] = [1, 1, 0]
CORNER_OFF[3][:] = [0, 1, 0]
CORNER_OFF[4][:] = [0, 0, 1]
CORNER_OFF[5][:] = [1, 0, 1]
CORNER_OFF[6][:] = [1, 1, 1]
CORNER_OFF[7][:] = [0, 1, 1]


cdef inline int _cube_index(double[:, :, ::1] values, double iso,
                            Py_ssize_t i, Py_ssize_t j, Py_ssize_t k) noexcept nogil:
    cdef int ci = 0
    cdef int b
    for b in range(8):
        if values[i + CORNER_OFF[b][0], j + CORNER_OFF[b][1], k + CORNER_OFF[b][2]] < iso:
            ci |= 1 << b
    return ci


def mc_collect(double[:, :, ::1] values, double iso, long long[:, ::1] tri_table):
    cdef Py_ssize_t x = values.shape[0]
    cdef Py_ssize_t y = values.shape[1]
    cdef Py_ssize_t z = values.shape[2]
    cdef Py_ssize_t i, j, k, c
    cdef int ci
    cdef long long e, gi, gj, gk
    cdef Py_ssize_t total = 0

    # first pass: count triangles
    for i in range(x - 1):
        for j in range(y - 1):
            for k in range(z - 1):
                ci = _cube_index(values, iso, i, j, k)
                if ci == 0 or ci == 255:
                    continue
                c = 0
                while tri_table[ci, c] >= 0:
                    c += 3
                total += c // 3

    keys_arr = np.empty((total, 3), dtype=np.int64)
    cdef long long[:, ::1] keys = keys_arr
    cdef Py_ssize_t t = 0
    for i in range(x - 1):
        for j in range(y - 1):
            for k in range(z - 1):
                ci = _cube_index(values, iso, i, j, k)
                if ci == 0 or ci == 255:
                    continue
                c = 0
                while tri_table[ci, c] >= 0:
                    for e in range(3):
                        gi = i + EDGE_BASE[tri_table[ci, c + e]][0]
                        gj = j + EDGE_BASE[tri_table[ci, c + e]][1]
                        gk = k + EDGE_BASE[tri_table[ci, c + e]][2]
                        keys[t, e] = ((gi * y + gj) * z + gk) * 3 + EDGE_AXIS[tri_table[ci, c + e]]
                    t += 1
                    c += 3
    return keys_arr


def raster_fill(double[:, :, ::1] xy, double[:, ::1] invz,
                Py_ssize_t width, Py_ssize_t height, double ztol):
    tri_arr = np.full((height, width), -1, dtype=np.int64)
    zbuf_arr = np.full((height, width), np.inf, dtype=np.float64)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    cdef long long[:, ::1] tri_id = tri_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef double[:, :, ::1] bary = bary_arr

    cdef Py_ssize_t t, px, py, x0, x1, y0, y1
    cdef double ax, ay, bx, by, cx, cy, area, fx, fy
    cdef double w0, w1, w2, inv, zv, lo, hi
    for t in range(xy.shape[0]):
        ax = xy[t, 0, 0]; ay = xy[t, 0, 1]
        bx = xy[t, 1, 0]; by = xy[t, 1, 1]
        cx = xy[t, 2, 0]; cy = xy[t, 2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        lo = ax
        if bx < lo: lo = bx
        if cx < lo: lo = cx
        hi = ax
        if bx > hi: hi = bx
        if cx > hi: hi = cx
        x0 = <Py_ssize_t> floor(lo - 0.5)
        x1 = <Py_ssize_t> ceil(hi - 0.5)
        if x0 < 0: x0 = 0
        if x1 > width - 1: x1 = width - 1
        lo = ay
        if by < lo: lo = by
        if cy < lo: lo = cy
        hi = ay
        if by > hi: hi = by
        if cy > hi: hi = cy
        y0 = <Py_ssize_t> floor(lo - 0.5)
        y1 = <Py_ssize_t> ceil(hi - 0.5)
        if y0 < 0: y0 = 0
        if y1 > height - 1: y1 = height - 1
        for py in range(y0, y1 + 1):
            fy = py + 0.5
            for px in range(x0, x1 + 1):
                fx = px + 0.5
                # w0 is 1 at vertex c, w1 at vertex a, w2 at vertex b
                w0 = ((bx - ax) * (fy - ay) - (by - ay) * (fx - ax)) / area
                w1 = ((cx - bx) * (fy - by) - (cy - by) * (fx - bx)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                inv = w1 * invz[t, 0] + w2 * invz[t, 1] + w0 * invz[t, 2]
                zv = 1.0 / inv
                if zv < zbuf[py, px] - ztol:
                    zbuf[py, px] = zv
                    tri_id[py, px] = t
                    bary[py, px, 0] = w1
                    bary[py, px, 1] = w2
                    bary[py, px, 2] = w0
    return tri_arr, zbuf_arr, bary_arr


def dda_mark(double[:, ::1] origins, double[:, ::1] dirs,
             double[::1] t0, double[::1] t1,
             double[::1] lo, double[::1] hi, long long[::1] res,
             cnp.uint8_t[:, :, ::1] out):
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t r, a, ax
    cdef double vox[3]
    cdef long long cell[3]
    cdef long long step[3]
    cdef double tmax[3]
    cdef double tdelta[3]
    cdef double d, start, t_next
    cdef long long max_iter = res[0] + res[1] + res[2] + 3
    cdef long long it

    for a in range(3):
        vox[a] = (hi[a] - lo[a]) / res[a]

    for r in range(n):
        if t0[r] >= t1[r]:
            continue
        for a in range(3):
            d = dirs[r, a]
            start = origins[r, a] + d * t0[r]
            cell[a] = <long long> floor((start - lo[a]) / vox[a])
            if cell[a] < 0: cell[a] = 0
            if cell[a] > res[a] - 1: cell[a] = res[a] - 1
            step[a] = 1 if d > 0 else -1
            if d == 0.0:
                tmax[a] = INFINITY
                tdelta[a] = INFINITY
            else:
                tmax[a] = (lo[a] + (cell[a] + (1 if step[a] > 0 else 0)) * vox[a]
                           - origins[r, a]) / d
                tdelta[a] = fabs(vox[a] / d)
        for it in range(max_iter):
            out[cell[0], cell[1], cell[2]] = 1
            if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                ax = 0
            elif tmax[1] <= tmax[2]:
                ax = 1
            else:
                ax = 2
            t_next = tmax[ax]
            cell[ax] += step[ax]
            tmax[ax] += tdelta[ax]
            if t_next >= t1[r]:
                break
            if cell[ax] < 0 or cell[ax] >= res[ax]:
                break
