"""The articulated proxy body: a capsule humanoid with linear blend skinning.

The avatar pipeline needs a posable body prior that supplies three services:
a watertight canonical surface for distance supervision, a nearest-vertex
lookup on the posed surface, and per-vertex blended bone transforms mapping
observation (posed) space into canonical space and back. A ten-capsule
humanoid covers all three at desk scale. The construction mirrors the left
limbs to produce the right ones, so the canonical body is exactly symmetric
about the x = 0 plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import VertexGrid
from .mesh import TriangleMesh

__all__ = [
    "CapsuleSpec",
    "ArticulatedBody",
    "BodyPose",
    "bone_transforms",
    "PosedBody",
    "lbs_deform",
    "canonical_direction",
    "capsule_mesh",
]


@dataclass(frozen=True)
class CapsuleSpec:
    """One bone: its joint pivot plus the capsule around its core segment."""

    name: str
    parent: int
    pivot: tuple
    p0: tuple
    p1: tuple
    radius: float


def _mirror_spec(spec, name, parent):
    flip = lambda p: (-p[0], p[1], p[2])
    return CapsuleSpec(name, parent, flip(spec.pivot), flip(spec.p0), flip(spec.p1), spec.radius)


def _default_capsules():
    """The ten-capsule humanoid; right limbs are mirror images of the left."""
    torso = CapsuleSpec("torso", -1, (0.0, 0.0, 0.90), (0.0, 0.0, 0.95), (0.0, 0.0, 1.40), 0.14)
    head = CapsuleSpec("head", 0, (0.0, 0.0, 1.45), (0.0, 0.0, 1.54), (0.0, 0.0, 1.62), 0.10)
    l_ua = CapsuleSpec("left_upper_arm", 0, (0.18, 0.0, 1.35), (0.21, 0.0, 1.35), (0.44, 0.0, 1.35), 0.050)
    l_la = CapsuleSpec("left_lower_arm", 2, (0.45, 0.0, 1.35), (0.47, 0.0, 1.35), (0.66, 0.0, 1.35), 0.042)
    l_ul = CapsuleSpec("left_upper_leg", 0, (0.09, 0.0, 0.92), (0.09, 0.0, 0.86), (0.09, 0.0, 0.52), 0.070)
    l_ll = CapsuleSpec("left_lower_leg", 6, (0.09, 0.0, 0.50), (0.09, 0.0, 0.46), (0.09, 0.0, 0.12), 0.055)
    return [
        torso,  # 0
        head,  # 1
        l_ua,  # 2
        l_la,  # 3
        _mirror_spec(l_ua, "right_upper_arm", 0),  # 4
        _mirror_spec(l_la, "right_lower_arm", 4),  # 5
        l_ul,  # 6
        l_ll,  # 7
        _mirror_spec(l_ul, "right_upper_leg", 0),  # 8
        _mirror_spec(l_ll, "right_lower_leg", 8),  # 9
    ]


def capsule_mesh(p0, p1, radius, n_seg=10, cap_rings=2, side_rings=2):
    """Triangulated capsule from p0 to p1: cylinder wall + hemisphere caps.

    n_seg must be even so the ring vertex sets are closed under the x-mirror
    of the local cross-section, which keeps the assembled body exactly
    mirror-symmetric.
    """
    if n_seg % 2 != 0:
        raise ValueError("n_seg must be even for a mirror-symmetric capsule")
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    if length < 1e-12:
        raise ValueError("capsule endpoints coincide")
    u = axis / length
    a = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(a, u)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(u, t1)

    theta = 2.0 * np.pi * np.arange(n_seg) / n_seg
    ct, st = np.cos(theta), np.sin(theta)

    # ring stack in local (rc = ring radius, z = height along the axis):
    # bottom cap up to the lower equator, wall, upper equator, top cap
    rings = []
    for i in range(1, cap_rings + 1):
        phi = -0.5 * np.pi + 0.5 * np.pi * i / cap_rings
        rings.append((radius * np.cos(phi), radius * np.sin(phi)))
    for j in range(1, side_rings + 1):
        rings.append((radius, length * j / side_rings))
    for j in range(1, cap_rings):
        phi = 0.5 * np.pi * j / cap_rings
        rings.append((radius * np.cos(phi), length + radius * np.sin(phi)))

    verts = [p0 - radius * u]  # bottom pole
    for rc, z in rings:
        ring = p0 + np.outer(rc * ct, t1) + np.outer(rc * st, t2) + np.outer(np.full(n_seg, z), u)
        verts.extend(ring)
    verts.append(p1 + radius * u)  # top pole
    verts = np.array(verts)

    faces = []
    ring0 = 1  # vertex index of the first ring's first vertex
    for s in range(n_seg):  # bottom fan
        faces.append([0, ring0 + (s + 1) % n_seg, ring0 + s])
    for r in range(len(rings) - 1):
        lo = ring0 + r * n_seg
        hi = lo + n_seg
        for s in range(n_seg):
            s2 = (s + 1) % n_seg
            faces.append([lo + s, lo + s2, hi + s2])
            faces.append([lo + s, hi + s2, hi + s])
    top_pole = len(verts) - 1
    last = ring0 + (len(rings) - 1) * n_seg
    for s in range(n_seg):  # top fan
        faces.append([last + s, last + (s + 1) % n_seg, top_pole])
    return verts, np.array(faces, dtype=np.int64)


def _mirror_mesh(verts, faces):
    mv = verts.copy()
    mv[:, 0] = -mv[:, 0]
    mf = faces[:, [0, 2, 1]]  # restore outward winding after the reflection
    return mv, mf


def segment_distance(points, p0, p1):
    """Distance from each point to the segment p0-p1."""
    p0 = np.asarray(p0, dtype=np.float64)
    d = np.asarray(p1, dtype=np.float64) - p0
    t = ((points - p0) @ d) / (d @ d)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(points - (p0 + t[:, None] * d), axis=1)


class ArticulatedBody:
    """Capsule skeleton + canonical surface mesh + skinning weights."""

    def __init__(self, capsules, n_seg=10, cap_rings=2, side_rings=2, skin_tau=0.02, skin_top_k=4):
        self.capsules = list(capsules)
        self.mesh_params = {"n_seg": n_seg, "cap_rings": cap_rings, "side_rings": side_rings}
        self.skin_params = {"tau": skin_tau, "top_k": skin_top_k}
        self._validate_tree()
        self._build_mesh()
        self._build_weights()

    # -- construction -------------------------------------------------------

    @classmethod
    def default(cls, **kwargs):
        """The standard ten-capsule humanoid, right limbs mirrored from left."""
        body = cls(_default_capsules(), **kwargs)
        body.mirror_bone_map = np.array([0, 1, 4, 5, 2, 3, 8, 9, 6, 7], dtype=np.int64)
        return body

    def _validate_tree(self):
        seen_root = False
        for i, cap in enumerate(self.capsules):
            if cap.parent == -1:
                if seen_root:
                    raise ValueError("body must have exactly one root bone")
                seen_root = True
            elif not 0 <= cap.parent < i:
                raise ValueError("bone parents must precede their children")
        if not seen_root:
            raise ValueError("body has no root bone")

    def _build_mesh(self):
        verts_all, faces_all = [], []
        self.vertex_bone = []  # owning capsule per vertex, for bookkeeping
        offset = 0
        mp = self.mesh_params
        built = {}
        for b, cap in enumerate(self.capsules):
            partner = "left_" + cap.name[6:] if cap.name.startswith("right_") else None
            if partner in built:
                # exact mirror of the left capsule so vertex positions
                # correspond bit-for-bit under x -> -x
                v, f = _mirror_mesh(*built[partner])
            else:
                v, f = capsule_mesh(
                    cap.p0, cap.p1, cap.radius, mp["n_seg"], mp["cap_rings"], mp["side_rings"]
                )
                built[cap.name] = (v, f)
            verts_all.append(v)
            faces_all.append(f + offset)
            self.vertex_bone.extend([b] * len(v))
            offset += len(v)
        self.canonical_mesh = TriangleMesh(np.vstack(verts_all), np.vstack(faces_all))
        self.vertex_bone = np.array(self.vertex_bone, dtype=np.int64)

    def _build_weights(self):
        verts = self.canonical_mesh.vertices
        n_bones = len(self.capsules)
        surf = np.empty((len(verts), n_bones))
        for b, cap in enumerate(self.capsules):
            surf[:, b] = segment_distance(verts, cap.p0, cap.p1) - cap.radius
        tau = self.skin_params["tau"]
        w = np.exp(-(surf - surf.min(axis=1, keepdims=True)) / tau)
        # keep the top_k influences per vertex, zero the rest, renormalize
        k = self.skin_params["top_k"]
        if k < n_bones:
            thresh = np.sort(w, axis=1)[:, -k][:, None]
            w = np.where(w >= thresh, w, 0.0)
        w /= w.sum(axis=1, keepdims=True)
        self.skinning_weights = w

    # -- queries -------------------------------------------------------------

    @property
    def n_bones(self):
        return len(self.capsules)

    def mirror_vertex_map(self):
        """Index of the mirror-image vertex for every canonical vertex."""
        from .backend import nearest_vertices

        mirrored = self.canonical_mesh.vertices.copy()
        mirrored[:, 0] = -mirrored[:, 0]
        return nearest_vertices(mirrored, self.canonical_mesh.vertices)

    def height(self):
        lo, hi = self.canonical_mesh.bounds()
        return float(hi[2] - lo[2])

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "capsules": [
                {
                    "name": c.name,
                    "parent": c.parent,
                    "pivot": list(c.pivot),
                    "p0": list(c.p0),
                    "p1": list(c.p1),
                    "radius": c.radius,
                }
                for c in self.capsules
            ],
            "mesh_params": dict(self.mesh_params),
            "skin_params": dict(self.skin_params),
            "mirror_bone_map": [int(i) for i in getattr(self, "mirror_bone_map", np.arange(self.n_bones))],
        }

    @classmethod
    def from_dict(cls, data):
        caps = [
            CapsuleSpec(c["name"], c["parent"], tuple(c["pivot"]), tuple(c["p0"]), tuple(c["p1"]), c["radius"])
            for c in data["capsules"]
        ]
        mp = data["mesh_params"]
        sp = data["skin_params"]
        body = cls(caps, n_seg=mp["n_seg"], cap_rings=mp["cap_rings"], side_rings=mp["side_rings"],
                   skin_tau=sp["tau"], skin_top_k=sp["top_k"])
        body.mirror_bone_map = np.array(data["mirror_bone_map"], dtype=np.int64)
        return body


@dataclass
class BodyPose:
    """Per-bone axis-angle rotations plus a global root motion, one frame."""

    rotations: np.ndarray  # (n_bones, 3) axis-angle, radians
    root_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame_index: int = 0

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root_rotation = np.asarray(self.root_rotation, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if not (
            np.all(np.isfinite(self.rotations))
            and np.all(np.isfinite(self.root_rotation))
            and np.all(np.isfinite(self.root_translation))
        ):
            raise ValueError("pose parameters must be finite")
        if self.frame_index < 0:
            raise ValueError("frame index must be >= 0")

    @classmethod
    def identity(cls, n_bones, frame_index=0):
        return cls(np.zeros((n_bones, 3)), frame_index=frame_index)

    def to_dict(self):
        return {
            "rotations": self.rotations.tolist(),
            "root_rotation": self.root_rotation.tolist(),
            "root_translation": self.root_translation.tolist(),
            "frame_index": int(self.frame_index),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            np.array(data["rotations"], dtype=np.float64),
            np.array(data["root_rotation"], dtype=np.float64),
            np.array(data["root_translation"], dtype=np.float64),
            int(data["frame_index"]),
        )


def axis_angle_matrix(v):
    """Rodrigues rotation matrix for an axis-angle vector."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        return np.eye(3)
    k = v / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def _rotation_about(pivot, R):
    """4x4 rotation of canonical space about a fixed pivot point."""
    m = np.eye(4)
    m[:3, :3] = R
    m[:3, 3] = pivot - R @ pivot
    return m


def bone_transforms(body, pose):
    """Canonical-to-posed 4x4 transform per bone via the joint hierarchy.

    Every bone rotates about its own pivot within its parent's frame, so the
    rest pose (all-zero rotations, zero root motion) yields identity
    matrices exactly.
    """
    if pose.rotations.shape != (body.n_bones, 3):
        raise ValueError("pose rotation count does not match body bones")
    G = np.empty((body.n_bones, 4, 4))
    for b, cap in enumerate(body.capsules):
        local = _rotation_about(np.asarray(cap.pivot), axis_angle_matrix(pose.rotations[b]))
        if cap.parent == -1:
            root = _rotation_about(np.asarray(cap.pivot), axis_angle_matrix(pose.root_rotation))
            world = np.eye(4)
            world[:3, 3] = pose.root_translation
            G[b] = world @ root @ local
        else:
            G[b] = G[cap.parent] @ local
    return G


def _apply_homogeneous(mats, points):
    """Apply per-point 4x4 transforms: (n,4,4) x (n,3) -> (n,3)."""
    return np.einsum("nij,nj->ni", mats[:, :3, :3], points) + mats[:, :3, 3]


class PosedBody:
    """Per-frame cache: posed surface, blended matrices, nearest-vertex grid.

    Built once per (body, pose) pair and reused for every ray sample of that
    frame; all queries afterwards are lookups plus small matrix applies.
    """

    def __init__(self, body, pose):
        self.body = body
        self.pose = pose
        self.transforms = bone_transforms(body, pose)
        w = body.skinning_weights
        self.vertex_matrices = np.einsum("vb,bij->vij", w, self.transforms)
        self.vertex_inverses = np.linalg.inv(self.vertex_matrices)
        self.posed_vertices = _apply_homogeneous(
            self.vertex_matrices, body.canonical_mesh.vertices
        )
        self.grid = VertexGrid(self.posed_vertices)

    def posed_mesh(self):
        return TriangleMesh(self.posed_vertices, self.body.canonical_mesh.faces)

    def nearest_vertex(self, points):
        return self.grid.query(np.atleast_2d(points))

    def canonicalize(self, points, return_indices=False):
        """Posed-space points -> canonical space via the nearest-vertex blend."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        idx = self.nearest_vertex(points)
        canonical = _apply_homogeneous(self.vertex_inverses[idx], points)
        if return_indices:
            return canonical, idx
        return canonical

    def deform(self, canonical_points, vertex_indices):
        """Canonical points back to posed space with the same vertex blend."""
        canonical_points = np.atleast_2d(np.asarray(canonical_points, dtype=np.float64))
        return _apply_homogeneous(self.vertex_matrices[vertex_indices], canonical_points)


def lbs_deform(x, pose, body, posed=None):
    """Map one observation-space point into canonical space.

    Convenience wrapper over PosedBody for single points; batch callers
    should build the cache once per frame and use ``canonicalize``.
    """
    if posed is None:
        posed = PosedBody(body, pose)
    return posed.canonicalize(np.asarray(x, dtype=np.float64).reshape(1, 3))[0]


def canonical_direction(x_k, x_prev, fallback=None):
    """Unit direction of travel between consecutive canonical ray samples.

    Coincident samples have no defined direction; those rows fall back to
    the supplied direction (usually the original observation-space ray).
    """
    x_k = np.atleast_2d(np.asarray(x_k, dtype=np.float64))
    x_prev = np.atleast_2d(np.asarray(x_prev, dtype=np.float64))
    diff = x_k - x_prev
    norm = np.linalg.norm(diff, axis=1, keepdims=True)
    degenerate = norm[:, 0] < 1e-12
    if degenerate.any():
        if fallback is None:
            raise ValueError("coincident samples and no fallback direction")
        fb = np.broadcast_to(np.atleast_2d(fallback), diff.shape)
        diff = np.where(degenerate[:, None], fb, diff)
        norm = np.where(degenerate[:, None], np.linalg.norm(diff, axis=1, keepdims=True), norm)
    out = diff / norm
    if out.shape[0] == 1 and np.asarray(x_k).ndim == 1:
        return out[0]
    return out
