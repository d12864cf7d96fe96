# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels: the per-query loops that dominate runtime.

Each routine has a numpy twin in ``kernels_py``; ``backend`` selects this
module when it imports. The math is kept expression-for-expression identical
to the fallback so both backends return the same bits.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline double _clamp01(double x) nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


cdef void _closest_on_triangle(
    const double* p, const double* a, const double* b, const double* c, double* out
) nogil:
    """Closest point on triangle abc to p, by Voronoi-region classification."""
    cdef double ab[3]
    cdef double ac[3]
    cdef double ap[3]
    cdef double bp[3]
    cdef double cp_[3]
    cdef double d1, d2, d3, d4, d5, d6, vc, vb, va, t, denom, v, w
    cdef int i
    for i in range(3):
        ab[i] = b[i] - a[i]
        ac[i] = c[i] - a[i]
        ap[i] = p[i] - a[i]
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        for i in range(3):
            out[i] = a[i]
        return
    for i in range(3):
        bp[i] = p[i] - b[i]
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        for i in range(3):
            out[i] = b[i]
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        for i in range(3):
            out[i] = a[i] + t * ab[i]
        return
    for i in range(3):
        cp_[i] = p[i] - c[i]
    d5 = ab[0] * cp_[0] + ab[1] * cp_[1] + ab[2] * cp_[2]
    d6 = ac[0] * cp_[0] + ac[1] * cp_[1] + ac[2] * cp_[2]
    if d6 >= 0.0 and d5 <= d6:
        for i in range(3):
            out[i] = c[i]
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        for i in range(3):
            out[i] = a[i] + t * ac[i]
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        for i in range(3):
            out[i] = b[i] + t * (c[i] - b[i])
        return
    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    for i in range(3):
        out[i] = a[i] + ab[i] * v + ac[i] * w


def closest_point_triangle(p, a, b, c):
    """Pairwise closest points on triangles (a, b, c) to points p; all (n, 3)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pp = np.ascontiguousarray(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cc = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t n = pp.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, 3))
    for i in range(n):
        _closest_on_triangle(&pp[i, 0], &aa[i, 0], &bb[i, 0], &cc[i, 0], &out[i, 0])
    return out


def brute_closest(queries, tri):
    """Exact min distance from each query to every triangle, by full scan."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = np.ascontiguousarray(
        np.atleast_2d(queries), dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=3] t = np.ascontiguousarray(tri, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0], m = t.shape[0], qi, fi, i
    if m == 0:
        raise ValueError("empty triangle set")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] face = np.empty(n, dtype=np.int64)
    cdef double best2, d2, cp[3]
    cdef Py_ssize_t best_f
    for qi in range(n):
        best2 = 1e300
        best_f = -1
        for fi in range(m):
            _closest_on_triangle(&q[qi, 0], &t[fi, 0, 0], &t[fi, 1, 0], &t[fi, 2, 0], cp)
            d2 = 0.0
            for i in range(3):
                d2 += (q[qi, i] - cp[i]) * (q[qi, i] - cp[i])
            if d2 < best2:
                best2 = d2
                best_f = fi
        dist[qi] = sqrt(best2)
        face[qi] = best_f
    return dist, face


cdef inline double _aabb_dist2(
    const double* p, const double* lo, const double* hi
) nogil:
    cdef double d, acc = 0.0
    cdef int i
    for i in range(3):
        d = lo[i] - p[i]
        if p[i] - hi[i] > d:
            d = p[i] - hi[i]
        if d > 0.0:
            acc += d * d
    return acc


def bvh_query(
    cnp.ndarray[cnp.float64_t, ndim=2] node_min,
    cnp.ndarray[cnp.float64_t, ndim=2] node_max,
    cnp.ndarray[cnp.int64_t, ndim=1] node_left,
    cnp.ndarray[cnp.int64_t, ndim=1] node_right,
    cnp.ndarray[cnp.int64_t, ndim=1] node_start,
    cnp.ndarray[cnp.int64_t, ndim=1] node_count,
    cnp.ndarray[cnp.int64_t, ndim=1] prim,
    cnp.ndarray[cnp.float64_t, ndim=3] tri,
    queries,
):
    """Closest mesh distance per query via depth-first pruned traversal."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = np.ascontiguousarray(
        np.atleast_2d(queries), dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nmin = np.ascontiguousarray(node_min)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nmax = np.ascontiguousarray(node_max)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] t = np.ascontiguousarray(tri)
    cdef Py_ssize_t n = q.shape[0], qi, node, s, k, i, l, r
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] face = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack = np.empty(2 * node_left.shape[0] + 2, dtype=np.int64)
    cdef Py_ssize_t top
    cdef double best2, d2, dl, dr, cp[3]
    cdef Py_ssize_t best_f, fi
    for qi in range(n):
        best2 = 1e300
        best_f = -1
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _aabb_dist2(&q[qi, 0], &nmin[node, 0], &nmax[node, 0]) >= best2:
                continue
            if node_count[node] > 0:
                s = node_start[node]
                for k in range(node_count[node]):
                    fi = prim[s + k]
                    _closest_on_triangle(
                        &q[qi, 0], &t[fi, 0, 0], &t[fi, 1, 0], &t[fi, 2, 0], cp
                    )
                    d2 = 0.0
                    for i in range(3):
                        d2 += (q[qi, i] - cp[i]) * (q[qi, i] - cp[i])
                    if d2 < best2:
                        best2 = d2
                        best_f = fi
            else:
                l = node_left[node]
                r = node_right[node]
                dl = _aabb_dist2(&q[qi, 0], &nmin[l, 0], &nmax[l, 0])
                dr = _aabb_dist2(&q[qi, 0], &nmin[r, 0], &nmax[r, 0])
                if dl <= dr:
                    stack[top] = r
                    top += 1
                    stack[top] = l
                    top += 1
                else:
                    stack[top] = l
                    top += 1
                    stack[top] = r
                    top += 1
        dist[qi] = sqrt(best2)
        face[qi] = best_f
    return dist, face


def parity_sign(points, tri, direction):
    """-1 inside / +1 outside by counting fixed-direction ray crossings."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.ascontiguousarray(
        np.atleast_2d(points), dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=3] t = np.ascontiguousarray(tri, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d = np.ascontiguousarray(direction, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], m = t.shape[0], qi, fi, i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sign = np.ones(n)
    cdef double e1[3]
    cdef double e2[3]
    cdef double pvec[3]
    cdef double tvec[3]
    cdef double qvec[3]
    cdef double det, inv_det, u, v, tt
    cdef long crossings
    for qi in range(n):
        crossings = 0
        for fi in range(m):
            for i in range(3):
                e1[i] = t[fi, 1, i] - t[fi, 0, i]
                e2[i] = t[fi, 2, i] - t[fi, 0, i]
            pvec[0] = d[1] * e2[2] - d[2] * e2[1]
            pvec[1] = d[2] * e2[0] - d[0] * e2[2]
            pvec[2] = d[0] * e2[1] - d[1] * e2[0]
            det = e1[0] * pvec[0] + e1[1] * pvec[1] + e1[2] * pvec[2]
            if fabs(det) <= 1e-12:
                continue
            inv_det = 1.0 / det
            for i in range(3):
                tvec[i] = p[qi, i] - t[fi, 0, i]
            u = (tvec[0] * pvec[0] + tvec[1] * pvec[1] + tvec[2] * pvec[2]) * inv_det
            if u < 0.0:
                continue
            qvec[0] = tvec[1] * e1[2] - tvec[2] * e1[1]
            qvec[1] = tvec[2] * e1[0] - tvec[0] * e1[2]
            qvec[2] = tvec[0] * e1[1] - tvec[1] * e1[0]
            v = (qvec[0] * d[0] + qvec[1] * d[1] + qvec[2] * d[2]) * inv_det
            if v < 0.0 or u + v > 1.0:
                continue
            tt = (qvec[0] * e2[0] + qvec[1] * e2[1] + qvec[2] * e2[2]) * inv_det
            if tt > 1e-12:
                crossings += 1
        if crossings % 2 == 1:
            sign[qi] = -1.0
    return sign


def grid_nearest(
    points,
    cnp.ndarray[cnp.float64_t, ndim=2] verts,
    cnp.ndarray[cnp.int64_t, ndim=1] cell_start,
    cnp.ndarray[cnp.int64_t, ndim=1] cell_items,
    cnp.ndarray[cnp.float64_t, ndim=1] origin,
    double h,
    cnp.ndarray[cnp.int64_t, ndim=1] dims,
):
    """Nearest-vertex indices through a uniform grid with expanding search.

    The grid arrays come from ``backend.VertexGrid``: ``cell_items`` holds
    vertex indices sorted by cell (ascending index within each cell) and
    ``cell_start`` the per-cell offsets. The search box grows one ring at a
    time until no unscanned cell can beat the best distance, so results are
    exact; ties resolve to the lowest vertex index.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.ascontiguousarray(
        np.atleast_2d(points), dtype=np.float64
    )
    cdef Py_ssize_t n = p.shape[0], qi, k
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef long nx = dims[0], ny = dims[1], nz = dims[2]
    cdef long cx, cy, cz, r, ix, iy, iz, lox, hix, loy, hiy, loz, hiz, cell, vi
    cdef double best2, d2, dx, dy, dz, margin, m_axis
    cdef Py_ssize_t best_i
    cdef bint full
    for qi in range(n):
        cx = <long>((p[qi, 0] - origin[0]) / h)
        cy = <long>((p[qi, 1] - origin[1]) / h)
        cz = <long>((p[qi, 2] - origin[2]) / h)
        if cx < 0:
            cx = 0
        if cx > nx - 1:
            cx = nx - 1
        if cy < 0:
            cy = 0
        if cy > ny - 1:
            cy = ny - 1
        if cz < 0:
            cz = 0
        if cz > nz - 1:
            cz = nz - 1
        best2 = 1e300
        best_i = -1
        r = 0
        while True:
            lox = cx - r
            hix = cx + r
            loy = cy - r
            hiy = cy + r
            loz = cz - r
            hiz = cz + r
            full = lox <= 0 and hix >= nx - 1 and loy <= 0 and hiy >= ny - 1 and loz <= 0 and hiz >= nz - 1
            if lox < 0:
                lox = 0
            if hix > nx - 1:
                hix = nx - 1
            if loy < 0:
                loy = 0
            if hiy > ny - 1:
                hiy = ny - 1
            if loz < 0:
                loz = 0
            if hiz > nz - 1:
                hiz = nz - 1
            for ix in range(lox, hix + 1):
                for iy in range(loy, hiy + 1):
                    for iz in range(loz, hiz + 1):
                        # only the new ring; inner cells were already scanned
                        if r > 0 and (
                            ix > cx - r and ix < cx + r
                            and iy > cy - r and iy < cy + r
                            and iz > cz - r and iz < cz + r
                        ):
                            continue
                        cell = (ix * ny + iy) * nz + iz
                        for k in range(cell_start[cell], cell_start[cell + 1]):
                            vi = cell_items[k]
                            dx = p[qi, 0] - verts[vi, 0]
                            dy = p[qi, 1] - verts[vi, 1]
                            dz = p[qi, 2] - verts[vi, 2]
                            d2 = dx * dx + dy * dy + dz * dz
                            if d2 < best2 or (d2 == best2 and vi < best_i):
                                best2 = d2
                                best_i = vi
            if full:
                break
            # min distance to any cell outside the scanned box; faces that hit
            # the grid boundary bound no cells (every vertex is inside the
            # grid), so only unclipped faces constrain the margin
            margin = 1e300
            if lox > 0:
                m_axis = p[qi, 0] - (origin[0] + lox * h)
                if m_axis < margin:
                    margin = m_axis
            if hix < nx - 1:
                m_axis = (origin[0] + (hix + 1) * h) - p[qi, 0]
                if m_axis < margin:
                    margin = m_axis
            if loy > 0:
                m_axis = p[qi, 1] - (origin[1] + loy * h)
                if m_axis < margin:
                    margin = m_axis
            if hiy < ny - 1:
                m_axis = (origin[1] + (hiy + 1) * h) - p[qi, 1]
                if m_axis < margin:
                    margin = m_axis
            if loz > 0:
                m_axis = p[qi, 2] - (origin[2] + loz * h)
                if m_axis < margin:
                    margin = m_axis
            if hiz < nz - 1:
                m_axis = (origin[2] + (hiz + 1) * h) - p[qi, 2]
                if m_axis < margin:
                    margin = m_axis
            if best_i >= 0 and margin > 0.0 and best2 <= margin * margin:
                break
            r += 1
        out[qi] = best_i
    return out
