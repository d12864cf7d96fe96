from .backend import (
    HAVE_EXTENSION,
    KERNEL_BACKEND,
    VertexGrid,
    build_bvh,
    bvh_query,
    nearest_vertices,
    parity_sign,
)
from .body import (
    ArticulatedBody,
    BodyPose,
    CapsuleSpec,
    PosedBody,
    bone_transforms,
    canonical_direction,
    capsule_mesh,
    lbs_deform,
)
from .distance import (
    MeshDistanceIndex,
    point_to_mesh_distance,
    points_to_mesh_distance,
    signed_distance,
)
from .kernels_py import marching_cubes_grid
from .mesh import TriangleMesh, load_obj, load_ply, sample_surface_points, save_obj, save_ply
from .symmetry import SagittalMaps, mirror

__all__ = [
    "HAVE_EXTENSION",
    "KERNEL_BACKEND",
    "VertexGrid",
    "build_bvh",
    "bvh_query",
    "nearest_vertices",
    "parity_sign",
    "ArticulatedBody",
    "BodyPose",
    "CapsuleSpec",
    "PosedBody",
    "bone_transforms",
    "canonical_direction",
    "capsule_mesh",
    "lbs_deform",
    "MeshDistanceIndex",
    "point_to_mesh_distance",
    "points_to_mesh_distance",
    "signed_distance",
    "marching_cubes_grid",
    "marching_cubes",
    "TriangleMesh",
    "load_obj",
    "load_ply",
    "sample_surface_points",
    "save_obj",
    "save_ply",
    "SagittalMaps",
    "mirror",
]


def marching_cubes(field, resolution, bounds, isolevel=0.0):
    """Extract the isosurface of a callable scalar field as a TriangleMesh.

    ``field`` maps an (n, 3) array of points to n scalar values; the grid has
    ``resolution`` samples per axis across ``bounds = (lo, hi)``. Returns
    (mesh, touches_boundary) where the flag marks an isosurface clipped by
    the grid (an open mesh).
    """
    import numpy as np

    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    if min(resolution) < 2:
        raise ValueError("need at least 2 grid samples per axis")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    axes = [np.linspace(lo[i], hi[i], resolution[i]) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    values = np.asarray(field(pts), dtype=np.float64).reshape(resolution)
    verts, faces, touches = marching_cubes_grid(values, isolevel)
    scale = (hi - lo) / (np.asarray(resolution, dtype=np.float64) - 1.0)
    world = lo + verts * scale
    return TriangleMesh(world, faces), touches
