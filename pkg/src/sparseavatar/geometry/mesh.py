"""Triangle meshes: construction, area bookkeeping, sampling, and flat-file IO."""

from __future__ import annotations

import numpy as np

__all__ = [
    "TriangleMesh",
    "load_obj",
    "save_obj",
    "load_ply",
    "save_ply",
    "sample_surface_points",
]


class TriangleMesh:
    """Indexed triangle mesh with cached per-face areas.

    Degenerate (zero-area) faces are dropped at construction so downstream
    distance and sampling code never has to special-case them.
    """

    __slots__ = ("vertices", "faces", "face_areas", "__weakref__")

    def __init__(self, vertices, faces, area_eps=1e-12):
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError("face indices out of vertex range")
        areas = _face_areas(vertices, faces)
        keep = areas > area_eps
        self.vertices = vertices
        self.faces = faces[keep]
        self.face_areas = areas[keep]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def triangles(self):
        """Face corner coordinates, shape (n_faces, 3, 3)."""
        return self.vertices[self.faces]

    def total_area(self):
        return float(self.face_areas.sum())

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def __repr__(self):
        return f"TriangleMesh({self.n_vertices} vertices, {self.n_faces} faces)"


def _face_areas(vertices, faces):
    if len(faces) == 0:
        return np.zeros(0)
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_surface_points(mesh, n, rng_seed=0, return_faces=False):
    """Draw ``n`` points uniformly by area across the mesh surface.

    Faces are chosen with probability proportional to their area; within a
    face the point is uniform via the square-root barycentric trick. A fixed
    seed reproduces the identical point set.
    """
    if mesh.n_faces == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(rng_seed)
    probs = mesh.face_areas / mesh.face_areas.sum()
    face_idx = rng.choice(mesh.n_faces, size=n, p=probs)
    tri = mesh.vertices[mesh.faces[face_idx]]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    u = 1.0 - r1
    v = r1 * (1.0 - r2)
    w = r1 * r2
    pts = u[:, None] * tri[:, 0] + v[:, None] * tri[:, 1] + w[:, None] * tri[:, 2]
    if return_faces:
        return pts, face_idx
    return pts


# ---------------------------------------------------------------------------
# file IO: ASCII OBJ and ASCII PLY, positions + faces only


def save_obj(path, mesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_ply(path, mesh):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def load_ply(path):
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    if next(lines).strip() != "ply":
        raise ValueError("not a PLY file")
    n_vert = n_face = 0
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        elif parts == ["end_header"]:
            break
    verts = np.array([[float(x) for x in next(lines).split()[:3]] for _ in range(n_vert)])
    faces = []
    for _ in range(n_face):
        parts = [int(x) for x in next(lines).split()]
        idx = parts[1 : 1 + parts[0]]
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
