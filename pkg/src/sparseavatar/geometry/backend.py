"""Kernel backend selection: compiled extension when available, numpy otherwise.

Import-time probing keeps the choice in one place; everything downstream
calls the module-level functions here and stays oblivious to which
implementation answered. ``KERNEL_BACKEND`` reports the active choice and
``SPARSEAVATAR_FORCE_PY=1`` in the environment pins the fallback (useful for
benchmarks and differential tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels_py
from .kernels_py import PARITY_RAY_DIRECTION, build_bvh

__all__ = [
    "KERNEL_BACKEND",
    "HAVE_EXTENSION",
    "build_bvh",
    "bvh_query",
    "brute_closest",
    "closest_point_triangle",
    "parity_sign",
    "nearest_vertices",
    "VertexGrid",
]

_ext = None
if os.environ.get("SPARSEAVATAR_FORCE_PY", "") != "1":
    try:
        from . import _kernels as _ext
    except ImportError:
        _ext = None

HAVE_EXTENSION = _ext is not None
KERNEL_BACKEND = "compiled" if HAVE_EXTENSION else "python"


def closest_point_triangle(p, a, b, c):
    if _ext is not None:
        return _ext.closest_point_triangle(p, a, b, c)
    return kernels_py.closest_point_triangle(
        np.asarray(p, dtype=np.float64),
        np.asarray(a, dtype=np.float64),
        np.asarray(b, dtype=np.float64),
        np.asarray(c, dtype=np.float64),
    )


def brute_closest(queries, tri):
    if _ext is not None:
        return _ext.brute_closest(queries, tri)
    return kernels_py.brute_closest(queries, tri)


def bvh_query(bvh, queries):
    if _ext is not None:
        return _ext.bvh_query(
            bvh.node_min,
            bvh.node_max,
            bvh.node_left,
            bvh.node_right,
            bvh.node_start,
            bvh.node_count,
            bvh.prim,
            np.ascontiguousarray(bvh.tri),
            queries,
        )
    return kernels_py.bvh_query_py(bvh, queries)


def parity_sign(points, tri):
    if _ext is not None:
        return _ext.parity_sign(points, tri, PARITY_RAY_DIRECTION)
    return kernels_py.parity_sign_py(points, tri)


class VertexGrid:
    """Uniform spatial hash over a vertex set for nearest-vertex queries.

    Cells index vertices through a counting sort, so ``cell_items`` lists
    each cell's vertices in ascending index order. The compiled backend walks
    expanding rings of cells; the fallback scans all vertices exactly.
    """

    def __init__(self, verts, target_cells=8):
        # Coarse cells win here: with sparse vertex sets a fine grid is mostly
        # empty, and the ring walk burns its time crossing empty cells before
        # the first candidate appears.
        verts = np.ascontiguousarray(verts, dtype=np.float64)
        self.verts = verts
        lo = verts.min(axis=0)
        hi = verts.max(axis=0)
        extent = float((hi - lo).max())
        self.h = max(extent / target_cells, 1e-9)
        # pad so boundary vertices land strictly inside the cell range
        self.origin = lo - 0.5 * self.h
        dims = np.floor((hi - self.origin) / self.h).astype(np.int64) + 1
        self.dims = np.maximum(dims, 1)
        nx, ny, nz = (int(d) for d in self.dims)
        cell = (
            np.clip(((verts - self.origin) / self.h).astype(np.int64), 0, self.dims - 1)
            @ np.array([ny * nz, nz, 1], dtype=np.int64)
        )
        order = np.argsort(cell, kind="stable")
        self.cell_items = order.astype(np.int64)
        counts = np.bincount(cell, minlength=nx * ny * nz)
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def query(self, points):
        if _ext is not None:
            return _ext.grid_nearest(
                points,
                self.verts,
                self.cell_start,
                self.cell_items,
                np.ascontiguousarray(self.origin),
                self.h,
                self.dims,
            )
        return kernels_py.nearest_vertices_py(points, self.verts)


def nearest_vertices(points, verts):
    """One-shot nearest-vertex query; builds a throwaway grid if compiled."""
    return VertexGrid(verts).query(points)
