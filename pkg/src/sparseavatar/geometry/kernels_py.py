"""Pure-numpy geometry kernels.

These are the fallback implementations of the small set of hot queries the
system needs: exact point-to-triangle closest points, BVH-accelerated
point-to-mesh distance, ray-parity inside/outside classification, grid
marching cubes, and nearest-vertex lookup. A compiled twin of the per-query
loops lives in ``_kernels``; ``backend`` picks whichever imports.

The BVH *tree construction* lives here for both backends so the two query
paths traverse byte-identical trees.
"""

from __future__ import annotations

import numpy as np

from .mc_tables import EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

__all__ = [
    "closest_point_triangle",
    "brute_closest",
    "BVH",
    "build_bvh",
    "bvh_query_py",
    "parity_sign_py",
    "marching_cubes_grid",
    "nearest_vertices_py",
    "PARITY_RAY_DIRECTION",
]


# ---------------------------------------------------------------------------
# point-to-triangle closest point (vectorized Voronoi-region walk)


def closest_point_triangle(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p; all (n, 3).

    Classifies each point into one of the seven Voronoi regions of its
    triangle (three vertices, three edges, interior) and projects
    accordingly. Runs fully vectorized; every branch is evaluated and the
    per-point result selected by the first matching region test.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
    t_ab = np.nan_to_num(t_ab)[:, None]
    t_ac = np.nan_to_num(t_ac)[:, None]
    t_bc = np.nan_to_num(t_bc)[:, None]
    v_in = np.nan_to_num(v_in)[:, None]
    w_in = np.nan_to_num(w_in)[:, None]

    conds = [
        (d1 <= 0) & (d2 <= 0),  # vertex a
        (d3 >= 0) & (d4 <= d3),  # vertex b
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),  # edge ab
        (d6 >= 0) & (d5 <= d6),  # vertex c
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),  # edge ac
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),  # edge bc
    ]
    out = a + ab * v_in + ac * w_in  # interior projection by default
    choices = [
        a,
        b,
        a + t_ab * ab,
        c,
        a + t_ac * ac,
        b + t_bc * (c - b),
    ]
    picked = np.zeros(len(p), dtype=bool)
    for cond, choice in zip(conds, choices):
        use = cond & ~picked
        out = np.where(use[:, None], choice, out)
        picked |= cond
    return out


def brute_closest(queries, tri, chunk=None):
    """Exact min distance from each query to every triangle, by full scan.

    tri has shape (m, 3, 3). Work is chunked over queries so the temporary
    (chunk, m, 3) arrays stay bounded.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    m = len(tri)
    if m == 0:
        raise ValueError("empty triangle set")
    if chunk is None:
        chunk = max(1, 2_000_000 // m)
    n = len(queries)
    dist = np.empty(n)
    face = np.empty(n, dtype=np.int64)
    a = tri[:, 0]
    b = tri[:, 1]
    c = tri[:, 2]
    for s in range(0, n, chunk):
        q = queries[s : s + chunk]
        k = len(q)
        qq = np.repeat(q, m, axis=0)
        cp = closest_point_triangle(
            qq,
            np.tile(a, (k, 1)),
            np.tile(b, (k, 1)),
            np.tile(c, (k, 1)),
        )
        d2 = ((qq - cp) ** 2).sum(axis=1).reshape(k, m)
        face[s : s + chunk] = np.argmin(d2, axis=1)
        dist[s : s + chunk] = np.sqrt(d2[np.arange(k), face[s : s + chunk]])
    return dist, face


# ---------------------------------------------------------------------------
# bounding volume hierarchy


class BVH:
    """Flat-array BVH over triangles; median split on the longest axis.

    Leaves hold up to ``leaf_size`` triangles through the ``prim`` index
    permutation. The same arrays drive both the Python and the compiled
    traversal, so the two backends visit identical trees.
    """

    __slots__ = (
        "node_min",
        "node_max",
        "node_left",
        "node_right",
        "node_start",
        "node_count",
        "prim",
        "tri",
    )

    def __init__(self, node_min, node_max, node_left, node_right, node_start, node_count, prim, tri):
        self.node_min = node_min
        self.node_max = node_max
        self.node_left = node_left
        self.node_right = node_right
        self.node_start = node_start
        self.node_count = node_count
        self.prim = prim
        self.tri = tri


def build_bvh(tri, leaf_size=8):
    tri = np.asarray(tri, dtype=np.float64)
    m = len(tri)
    if m == 0:
        raise ValueError("empty triangle set")
    centroids = tri.mean(axis=1)
    tri_min = tri.min(axis=1)
    tri_max = tri.max(axis=1)
    prim = np.arange(m)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []

    def new_node():
        node_min.append(None)
        node_max.append(None)
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(-1)
        node_count.append(0)
        return len(node_min) - 1

    # iterative build; stack entries are (node index, start, end) over prim
    root = new_node()
    stack = [(root, 0, m)]
    while stack:
        idx, s, e = stack.pop()
        ids = prim[s:e]
        node_min[idx] = tri_min[ids].min(axis=0)
        node_max[idx] = tri_max[ids].max(axis=0)
        if e - s <= leaf_size:
            node_start[idx] = s
            node_count[idx] = e - s
            continue
        cen = centroids[ids]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        order = np.argsort(cen[:, axis], kind="stable")
        prim[s:e] = ids[order]
        mid = s + (e - s) // 2
        left = new_node()
        right = new_node()
        node_left[idx] = left
        node_right[idx] = right
        stack.append((left, s, mid))
        stack.append((right, mid, e))

    return BVH(
        np.array(node_min),
        np.array(node_max),
        np.array(node_left, dtype=np.int64),
        np.array(node_right, dtype=np.int64),
        np.array(node_start, dtype=np.int64),
        np.array(node_count, dtype=np.int64),
        prim,
        tri,
    )


def _aabb_dist2(p, lo, hi):
    d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return float(d @ d)


def bvh_query_py(bvh, queries):
    """Closest mesh distance per query via depth-first pruned traversal."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = len(queries)
    out_d = np.empty(n)
    out_f = np.empty(n, dtype=np.int64)
    tri = bvh.tri
    for qi in range(n):
        p = queries[qi]
        best2 = np.inf
        best_f = -1
        stack = [0]
        while stack:
            node = stack.pop()
            if _aabb_dist2(p, bvh.node_min[node], bvh.node_max[node]) >= best2:
                continue
            cnt = bvh.node_count[node]
            if cnt > 0:
                s = bvh.node_start[node]
                ids = bvh.prim[s : s + cnt]
                t = tri[ids]
                cp = closest_point_triangle(
                    np.broadcast_to(p, (cnt, 3)), t[:, 0], t[:, 1], t[:, 2]
                )
                d2 = ((p - cp) ** 2).sum(axis=1)
                k = int(np.argmin(d2))
                if d2[k] < best2:
                    best2 = float(d2[k])
                    best_f = int(ids[k])
            else:
                l, r = bvh.node_left[node], bvh.node_right[node]
                dl = _aabb_dist2(p, bvh.node_min[l], bvh.node_max[l])
                dr = _aabb_dist2(p, bvh.node_min[r], bvh.node_max[r])
                # push the farther child first so the nearer is explored next
                if dl <= dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
        out_d[qi] = np.sqrt(best2)
        out_f[qi] = best_f
    return out_d, out_f


# ---------------------------------------------------------------------------
# inside/outside classification by ray parity

# fixed generic direction: irrational-ish components so axis-aligned and
# regularly gridded meshes are never hit edge-on
PARITY_RAY_DIRECTION = np.array([0.5718457734580237, 0.5272734570912243, 0.6287256662989689])


def parity_sign_py(points, tri, chunk=None):
    """-1 for points inside a watertight mesh, +1 outside, by ray parity.

    Casts one fixed-direction ray per point and counts triangle crossings
    with the Moller-Trumbore test; an odd count means inside. Points lying
    exactly on the surface classify as outside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m = len(tri)
    if chunk is None:
        chunk = max(1, 2_000_000 // m)
    d = PARITY_RAY_DIRECTION
    a = tri[:, 0]
    e1 = tri[:, 1] - a
    e2 = tri[:, 2] - a
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-12
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    n = len(points)
    sign = np.ones(n)
    for s in range(0, n, chunk):
        p = points[s : s + chunk]
        tvec = p[:, None, :] - a[None, :, :]
        u = np.einsum("qmj,mj->qm", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("qmj,j->qm", qvec, d) * inv_det
        t = np.einsum("qmj,mj->qm", qvec, e2) * inv_det
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-12)
        odd = hit.sum(axis=1) % 2 == 1
        sign[s : s + chunk] = np.where(odd, -1.0, 1.0)
    return sign


# ---------------------------------------------------------------------------
# marching cubes over a sampled scalar grid


def marching_cubes_grid(values, isolevel=0.0):
    """Triangulate the ``isolevel`` surface of a sampled scalar grid.

    values has shape (nx, ny, nz) of samples at grid points; output vertices
    are in fractional grid coordinates (the caller scales to world space).
    Vertices on shared cell edges are welded through a global edge index so
    the mesh is watertight wherever the surface stays inside the grid.

    Returns (vertices, faces, touches_boundary).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 2:
        raise ValueError("need a 3-D grid with at least 2 samples per axis")
    nx, ny, nz = values.shape
    inside = values < isolevel

    touches = bool(
        inside[0].any()
        or inside[-1].any()
        or inside[:, 0].any()
        or inside[:, -1].any()
        or inside[:, :, 0].any()
        or inside[:, :, -1].any()
    )

    # per-cell case index from the 8 corner inside-bits
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    corner_shifts = [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ]
    for bit, (dx, dy, dz) in enumerate(corner_shifts):
        case |= inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz] << bit

    active = np.nonzero(EDGE_TABLE[case] != 0)
    if len(active[0]) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), touches
    ci, cj, ck = (idx.astype(np.int64) for idx in active)
    cell_case = case[active]

    # expand the triangle fans: rows of TRI_TABLE, -1 padded
    fan = TRI_TABLE[cell_case]  # (A, 16)
    valid = fan >= 0
    counts = valid.sum(axis=1)
    local_edge = fan[valid]  # flat, groups of 3
    rep = np.repeat(np.arange(len(ci)), counts)
    ei, ej, ek = ci[rep], cj[rep], ck[rep]

    # map each (cell, local edge) to a global grid-edge id; orientation is
    # the axis the edge runs along, base is its lower grid point
    edge_orient = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)
    edge_base = np.array(
        [
            [0, 0, 0],
            [1, 0, 0],
            [0, 1, 0],
            [0, 0, 0],
            [0, 0, 1],
            [1, 0, 1],
            [0, 1, 1],
            [0, 0, 1],
            [0, 0, 0],
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
        ],
        dtype=np.int64,
    )
    o = edge_orient[local_edge]
    bi = ei + edge_base[local_edge, 0]
    bj = ej + edge_base[local_edge, 1]
    bk = ek + edge_base[local_edge, 2]
    gid = ((o * nx + bi) * ny + bj) * nz + bk

    uniq, inv = np.unique(gid, return_inverse=True)
    faces = inv.reshape(-1, 3)

    # place one vertex per unique crossed edge by linear interpolation
    uo, rem = np.divmod(uniq, nx * ny * nz)
    ui, rem = np.divmod(rem, ny * nz)
    uj, uk = np.divmod(rem, nz)
    v0 = values[ui, uj, uk]
    step = np.eye(3, dtype=np.int64)[uo]
    v1 = values[ui + step[:, 0], uj + step[:, 1], uk + step[:, 2]]
    t = (isolevel - v0) / (v1 - v0)
    verts = np.stack([ui, uj, uk], axis=1).astype(np.float64) + t[:, None] * step
    return verts, faces, touches


# ---------------------------------------------------------------------------
# nearest-vertex lookup


def nearest_vertices_py(points, verts, chunk=512):
    """Index of the closest vertex per point; ties go to the lowest index."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    verts = np.asarray(verts, dtype=np.float64)
    out = np.empty(len(points), dtype=np.int64)
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk]
        d2 = ((p[:, None, :] - verts[None, :, :]) ** 2).sum(axis=-1)
        out[s : s + chunk] = np.argmin(d2, axis=1)
    return out
