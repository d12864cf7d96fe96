"""Deterministic synthetic capture generation with an exact raytracer.

Produces the training corpus the avatar pipeline ingests: RGB frames, exact
binary human masks, metric depth maps, camera parameters, and body poses for
an articulated capsule body walking inside a textured room. Geometry is
resolved analytically (ray/plane, ray/box, ray/capsule closed forms), so
masks and depths are ground truth rather than estimates.

Design notes:

- The room is itself one of the textured boxes, viewed from inside, so every
  camera ray terminates on geometry; the background field then receives full
  photometric and depth supervision with no unmodeled "sky".
- Shading is Lambertian with a light in the body's sagittal plane and scales
  only the albedo's brightness. Hue and saturation are therefore exactly
  mirror-symmetric whenever the body albedo is, which is what the
  sagittal-symmetry prior assumes of real people.
- Frames are mutually independent (pose and camera are closed-form functions
  of the frame index), so generation could run frame-parallel; at the
  default 64x64 scale a sequential loop is already fast.

Dataset layout written by ``write_dataset`` (the only ingestion contract the
trainer accepts): ``frames/NNNN.png``, ``masks/NNNN.png``,
``depth/NNNN.pfm``, ``manifest`` (JSON: cameras, poses, split, body,
texture, ray bounds).
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import imgio
from .geometry.body import ArticulatedBody, BodyPose, bone_transforms, segment_distance
from .rendering import Camera

__all__ = [
    "BoxSpec",
    "BodyTexture",
    "make_body_texture",
    "SceneSpec",
    "scene_preset",
    "CaptureFrame",
    "Capture",
    "posed_capsules",
    "capsule_union_distance",
    "ray_capsule_first_hit",
    "shade",
    "camera_ray_directions",
    "body_pose_at",
    "camera_at",
    "render_capture_frame",
    "generate_capture",
    "classify_rays",
    "write_dataset",
    "load_dataset",
]

# light direction lies in the x = 0 plane so shading never breaks the
# body's left/right appearance symmetry (it scales brightness only)
LIGHT_DIR = np.array([0.0, -0.35, 0.93])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.55
DIFFUSE = 0.45

_EPS_T = 1e-9


# ---------------------------------------------------------------------------
# scene description


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned textured box; ``room=True`` means it is seen from inside."""

    lo: tuple
    hi: tuple
    palette: tuple  # two rgb triples for the checker pattern
    cell: float = 0.4
    room: bool = False

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if not np.all(hi > lo):
            raise ValueError("box hi must exceed lo on every axis")
        if self.cell <= 0:
            raise ValueError("texture cell size must be positive")


_ROOM = BoxSpec(
    lo=(-4.0, -4.0, -0.01),
    hi=(4.0, 4.0, 3.2),
    palette=((0.72, 0.68, 0.60), (0.38, 0.45, 0.58)),
    cell=0.8,
    room=True,
)
_CRATE = BoxSpec(
    lo=(-2.4, 1.2, 0.0),
    hi=(-1.2, 2.4, 1.1),
    palette=((0.78, 0.33, 0.21), (0.92, 0.80, 0.35)),
    cell=0.3,
)
_BENCH = BoxSpec(
    lo=(1.4, 0.9, 0.0),
    hi=(2.3, 2.2, 0.8),
    palette=((0.22, 0.55, 0.31), (0.85, 0.86, 0.88)),
    cell=0.25,
)

_PLANE_PALETTE = ((0.62, 0.57, 0.50), (0.30, 0.28, 0.33))
_PLANE_CELL = 0.75


@dataclass(frozen=True)
class SceneSpec:
    """Full recipe for one capture: scene content, trajectories, and split."""

    n_frames: int = 24
    width: int = 64
    height: int = 64
    focal: float = None  # pixels; default picked so the body fills the frame
    seed: int = 0

    trajectory: str = "orbit"  # "orbit" or "linear"
    arc_span_deg: float = 360.0
    arc_start_deg: float = -90.0
    split_fraction: float = 1.0 / 3.0
    camera_radius: float = 2.6
    camera_height: float = 1.4
    orbit_center: tuple = (0.0, 0.0, 0.9)
    linear_from: tuple = (-1.8, -2.6, 1.4)
    linear_to: tuple = (1.8, -2.6, 1.4)
    linear_look: tuple = (0.0, 1.0, 0.0)

    walk_from: tuple = (-0.4, 0.0, 0.0)
    walk_to: tuple = (0.4, 0.0, 0.0)
    gait_amplitude: float = 0.5
    gait_cycles: float = 2.0

    plane_extent: float = 6.0
    boxes: tuple = (_ROOM, _CRATE, _BENCH)
    body_asymmetric: bool = False
    texture_bands: int = 4

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("a capture needs at least two frames")
        if not (0.0 < self.arc_span_deg <= 360.0):
            raise ValueError("arc span must lie in (0, 360] degrees")
        if not (0.0 < self.split_fraction <= 1.0):
            raise ValueError("split fraction must lie in (0, 1]")
        if self.trajectory not in ("orbit", "linear"):
            raise ValueError("trajectory must be 'orbit' or 'linear'")
        if self.width < 2 or self.height < 2:
            raise ValueError("frames must be at least 2x2")

    @property
    def focal_px(self):
        return self.focal if self.focal is not None else 1.15 * self.height


def scene_preset(name, **overrides):
    """Shipped capture recipes.

    ``arc120``: orbit cameras covering the full circle, but only the leading
    120 degrees (the front arc) train; sides and back are held-out test
    views. ``drive-by``: a linear forward-facing camera passing a crossing
    body, with the trailing frames held out.
    """
    if name == "arc120":
        base = SceneSpec(trajectory="orbit", arc_span_deg=360.0, split_fraction=1.0 / 3.0)
    elif name == "drive-by":
        base = SceneSpec(
            trajectory="linear",
            n_frames=30,
            split_fraction=0.6,
            walk_from=(-0.9, 0.2, 0.0),
            walk_to=(0.9, 0.2, 0.0),
        )
    else:
        raise ValueError(f"unknown scene preset {name!r}")
    return replace(base, **overrides) if overrides else base


# ---------------------------------------------------------------------------
# body texture


@dataclass(frozen=True)
class BodyTexture:
    """Piecewise albedo: per capsule, ``bands`` colors along its axis."""

    colors: np.ndarray  # (n_bones, bands, 3)
    asymmetric: bool = False

    @property
    def bands(self):
        return self.colors.shape[1]

    def color_at(self, bone, frac):
        """Albedo for hit points: bone indices (n,), axis fractions (n,)."""
        bone = np.asarray(bone, dtype=np.int64)
        band = np.clip(
            (np.asarray(frac) * self.bands).astype(np.int64), 0, self.bands - 1
        )
        return self.colors[bone, band]

    def to_dict(self):
        return {"colors": self.colors.tolist(), "asymmetric": bool(self.asymmetric)}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["colors"], dtype=np.float64), bool(data["asymmetric"]))


def _saturated_color(rng):
    h = rng.uniform(0.0, 1.0)
    s = rng.uniform(0.55, 0.95)
    v = rng.uniform(0.60, 0.95)
    return colorsys.hsv_to_rgb(h, s, v)


def make_body_texture(body, seed, asymmetric=False, bands=4):
    """Random saturated band colors per capsule, deterministic under seed.

    Symmetric textures (default) copy each left capsule's bands onto its
    mirror partner, giving a positive control for the symmetry prior;
    ``asymmetric=True`` draws the right side independently instead.
    """
    rng = np.random.default_rng(seed)
    n = body.n_bones
    colors = np.array([[_saturated_color(rng) for _ in range(bands)] for _ in range(n)])
    mirror = getattr(body, "mirror_bone_map", np.arange(n))
    if not asymmetric:
        for b in range(n):
            m = mirror[b]
            if m > b:  # copy the earlier (left) bone onto its partner
                colors[m] = colors[b]
    return BodyTexture(colors=colors, asymmetric=asymmetric)


# ---------------------------------------------------------------------------
# analytic intersections


def posed_capsules(body, pose=None, transforms=None):
    """Rigidly posed capsule primitives: endpoints (B, 3) twice, radii (B,)."""
    if transforms is None:
        pose = pose if pose is not None else BodyPose.identity(body.n_bones)
        transforms = bone_transforms(body, pose)
    p0 = np.array([c.p0 for c in body.capsules])
    p1 = np.array([c.p1 for c in body.capsules])
    r = np.array([c.radius for c in body.capsules])
    pa = np.einsum("bij,bj->bi", transforms[:, :3, :3], p0) + transforms[:, :3, 3]
    pb = np.einsum("bij,bj->bi", transforms[:, :3, :3], p1) + transforms[:, :3, 3]
    return pa, pb, r


def capsule_union_distance(points, pa, pb, radii):
    """Signed distance from points to the union of capsules (negative inside)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    best = np.full(len(points), np.inf)
    for a, b, r in zip(pa, pb, radii):
        best = np.minimum(best, segment_distance(points, a, b) - r)
    return best


def _ray_one_capsule(o, dirs, pa, pb, r):
    """First-hit distances of rays (one origin, many directions) vs a capsule.

    Closed form: the cylindrical body is a quadratic in t, valid only while
    the axial coordinate lies within the segment; each spherical cap is
    valid only on its outward side. Misses return +inf.
    """
    ba = pb - pa
    oa = o - pa
    baba = float(ba @ ba)
    bard = dirs @ ba  # (n,)
    baoa = float(oa @ ba)
    doa = dirs @ oa  # (n,)

    t_best = np.full(len(dirs), np.inf)

    k2 = baba - bard * bard
    k1 = baba * doa - baoa * bard
    k0 = baba * float(oa @ oa) - baoa * baoa - r * r * baba
    disc = k1 * k1 - k2 * k0
    body = (disc >= 0.0) & (np.abs(k2) > 1e-14)
    if body.any():
        t = np.full(len(dirs), np.inf)
        t[body] = (-k1[body] - np.sqrt(disc[body])) / k2[body]
        y = baoa + t * bard
        ok = body & (t > _EPS_T) & (y >= 0.0) & (y <= baba)
        t_best[ok] = t[ok]

    for center, outward in ((pa, False), (pb, True)):
        oc = o - center
        b_half = dirs @ oc
        c0 = float(oc @ oc) - r * r
        disc_s = b_half * b_half - c0
        hit = disc_s >= 0.0
        if not hit.any():
            continue
        t = np.full(len(dirs), np.inf)
        t[hit] = -b_half[hit] - np.sqrt(disc_s[hit])
        y = baoa + t * bard
        side = (y >= baba) if outward else (y <= 0.0)
        ok = hit & (t > _EPS_T) & side
        t_best[ok] = np.minimum(t_best[ok], t[ok])
    return t_best


def ray_capsule_first_hit(o, dirs, pa, pb, radii):
    """First hit of each ray against a capsule union.

    Returns (t, bone, frac): hit distance (+inf on miss), index of the hit
    capsule (-1 on miss), and the hit's clamped fractional position along
    that capsule's axis (for texturing).
    """
    o = np.asarray(o, dtype=np.float64)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(dirs)
    t_best = np.full(n, np.inf)
    bone = np.full(n, -1, dtype=np.int64)
    for k in range(len(radii)):
        t_k = _ray_one_capsule(o, dirs, pa[k], pb[k], radii[k])
        closer = t_k < t_best
        t_best[closer] = t_k[closer]
        bone[closer] = k
    frac = np.zeros(n)
    hit = bone >= 0
    if hit.any():
        p = o + t_best[hit, None] * dirs[hit]
        ba = pa[bone[hit]]
        bb = pb[bone[hit]]
        axis = bb - ba
        frac[hit] = np.clip(
            np.einsum("ij,ij->i", p - ba, axis) / np.einsum("ij,ij->i", axis, axis),
            0.0,
            1.0,
        )
    return t_best, bone, frac


def _ray_plane(o, dirs, extent):
    """Hit distance vs the textured ground rectangle z = 0 (+inf on miss)."""
    dz = dirs[:, 2]
    t = np.full(len(dirs), np.inf)
    moving = np.abs(dz) > 1e-14
    t[moving] = -o[2] / dz[moving]
    p = o + t[:, None] * dirs
    bad = (t <= _EPS_T) | (np.abs(p[:, 0]) > extent) | (np.abs(p[:, 1]) > extent)
    t[bad] = np.inf
    return t


def _ray_box(o, dirs, box):
    """Hit distance and face axis vs one box (interior face when room=True)."""
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    safe = np.where(np.abs(dirs) < 1e-14, np.where(dirs < 0, -1e-14, 1e-14), dirs)
    ta = (lo - o) / safe
    tb = (hi - o) / safe
    t_lo = np.minimum(ta, tb)
    t_hi = np.maximum(ta, tb)
    t0 = t_lo.max(axis=1)
    t1 = t_hi.min(axis=1)
    inside = bool(np.all((o > lo) & (o < hi)))
    if box.room:
        if not inside:
            # a room box viewed from outside would occlude the whole scene
            # with its near wall; treat as miss so exteriors stay renderable
            return np.full(len(dirs), np.inf), np.zeros(len(dirs), dtype=np.int64)
        t = t1
        axis = t_hi.argmin(axis=1)
        ok = t > _EPS_T
    else:
        t = t0
        axis = t_lo.argmax(axis=1)
        ok = (t1 >= t0) & (t0 > _EPS_T) & (not inside)
    t = np.where(ok, t, np.inf)
    return t, axis


def _checker(u, v, cell, palette):
    idx = (np.floor(u / cell) + np.floor(v / cell)).astype(np.int64) & 1
    return np.asarray(palette, dtype=np.float64)[idx]


def shade(albedo, normals):
    """Lambert shading used for all ground truth: scales brightness only."""
    lam = AMBIENT + DIFFUSE * np.clip(normals @ LIGHT_DIR, 0.0, None)
    return np.clip(albedo * lam[:, None], 0.0, 1.0)


# ---------------------------------------------------------------------------
# cameras, poses, frames


def camera_ray_directions(cam):
    """World-space unit directions for every pixel, row-major (v, then u)."""
    us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    x = (us.ravel() - cam.cx) / cam.fx
    y = (vs.ravel() - cam.cy) / cam.fy
    d = np.stack([x, y, np.ones_like(x)], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d @ cam.rotation.T


def camera_at(spec, i):
    """Camera for frame i along the spec's trajectory."""
    if spec.trajectory == "orbit":
        az = np.deg2rad(_azimuth_deg(spec, i))
        center = np.asarray(spec.orbit_center)
        eye = np.array(
            [
                center[0] + spec.camera_radius * np.cos(az),
                center[1] + spec.camera_radius * np.sin(az),
                spec.camera_height,
            ]
        )
        target = center
    else:
        a = i / (spec.n_frames - 1)
        eye = (1 - a) * np.asarray(spec.linear_from) + a * np.asarray(spec.linear_to)
        target = eye + np.asarray(spec.linear_look)
    return Camera.look_at(
        eye,
        target,
        fx=spec.focal_px,
        fy=spec.focal_px,
        width=spec.width,
        height=spec.height,
    )


def _azimuth_deg(spec, i):
    n = spec.n_frames
    step = spec.arc_span_deg / n if spec.arc_span_deg >= 360.0 else spec.arc_span_deg / (n - 1)
    return spec.arc_start_deg + step * i


def body_pose_at(spec, body, i):
    """Walk-cycle pose for frame i: linear root motion plus sinusoidal gait."""
    a = i / (spec.n_frames - 1)
    phase = 2.0 * np.pi * spec.gait_cycles * a
    swing = spec.gait_amplitude * np.sin(phase)
    rot = np.zeros((body.n_bones, 3))
    by_name = {c.name: k for k, c in enumerate(body.capsules)}

    def set_pitch(name, amount):
        if name in by_name:
            rot[by_name[name], 1] = amount

    # arms hang at the sides (rotated down from the T-shaped rest pose) and
    # swing counter to the same-side leg; at swing = 0 the pose is an exact
    # left/right mirror of itself
    arm_drop = 1.25
    set_pitch("left_upper_leg", swing)
    set_pitch("right_upper_leg", -swing)
    set_pitch("left_lower_leg", -0.4 * swing)
    set_pitch("right_lower_leg", 0.4 * swing)
    set_pitch("left_upper_arm", arm_drop - 0.7 * swing)
    set_pitch("right_upper_arm", -arm_drop + 0.7 * swing)
    set_pitch("left_lower_arm", 0.2 + 0.25 * swing)
    set_pitch("right_lower_arm", -0.2 - 0.25 * swing)
    translation = (1 - a) * np.asarray(spec.walk_from) + a * np.asarray(spec.walk_to)
    return BodyPose(rotations=rot, root_translation=translation, frame_index=i)


@dataclass
class CaptureFrame:
    """One rendered observation with its exact ground truth."""

    image: np.ndarray  # (H, W, 3) float in [0, 1]
    mask: np.ndarray  # (H, W) bool, True on visible body
    depth: np.ndarray  # (H, W) float, ray-parameter meters, 0 if undefined
    camera: Camera
    pose: BodyPose
    index: int
    azimuth_deg: float = None


@dataclass
class Capture:
    """A generated dataset: frames, split, and everything needed to retrain."""

    frames: list
    train_indices: list
    test_indices: list
    body: ArticulatedBody
    texture: BodyTexture
    spec: SceneSpec
    t_near: float
    t_far: float


def render_capture_frame(spec, body, texture, i):
    """Raytrace frame i exactly; returns a CaptureFrame."""
    cam = camera_at(spec, i)
    pose = body_pose_at(spec, body, i)
    pa, pb, radii = posed_capsules(body, pose)

    clearance = capsule_union_distance(cam.origin[None], pa, pb, radii)[0]
    if clearance < 0.1:
        raise ValueError(
            f"degenerate trajectory: camera for frame {i} is {clearance:.3f} m "
            "from the body surface (must stay at least 0.1 m away)"
        )

    dirs = camera_ray_directions(cam)
    o = cam.origin
    n = len(dirs)

    # background: nearest of plane and boxes, with albedo and normal
    t_bg = _ray_plane(o, dirs, spec.plane_extent)
    p = o + t_bg[:, None] * dirs
    albedo = np.zeros((n, 3))
    normal = np.zeros((n, 3))
    planar = np.isfinite(t_bg)
    albedo[planar] = _checker(p[planar, 0], p[planar, 1], _PLANE_CELL, _PLANE_PALETTE)
    normal[planar] = (0.0, 0.0, 1.0)

    for box in spec.boxes:
        t_b, axis = _ray_box(o, dirs, box)
        closer = t_b < t_bg
        if not closer.any():
            continue
        t_bg = np.where(closer, t_b, t_bg)
        hit_p = o + t_b[closer, None] * dirs[closer]
        ax = axis[closer]
        u_ax = (ax + 1) % 3
        v_ax = (ax + 2) % 3
        rows = np.arange(len(hit_p))
        albedo[closer] = _checker(hit_p[rows, u_ax], hit_p[rows, v_ax], box.cell, box.palette)
        nrm = np.zeros((len(hit_p), 3))
        nrm[rows, ax] = -np.sign(dirs[np.flatnonzero(closer), ax])
        normal[closer] = nrm

    # body
    t_body, bone, frac = ray_capsule_first_hit(o, dirs, pa, pb, radii)
    mask_flat = t_body < t_bg

    color = np.zeros((n, 3))
    bg_vis = ~mask_flat & np.isfinite(t_bg)
    color[bg_vis] = shade(albedo[bg_vis], normal[bg_vis])
    if mask_flat.any():
        hit_p = o + t_body[mask_flat, None] * dirs[mask_flat]
        a = pa[bone[mask_flat]]
        b = pb[bone[mask_flat]]
        axis_v = b - a
        tproj = np.clip(
            np.einsum("ij,ij->i", hit_p - a, axis_v)
            / np.einsum("ij,ij->i", axis_v, axis_v),
            0.0,
            1.0,
        )
        nearest = a + tproj[:, None] * axis_v
        nrm = hit_p - nearest
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        color[mask_flat] = shade(
            texture.color_at(bone[mask_flat], frac[mask_flat]), nrm
        )

    depth_flat = np.where(mask_flat, t_body, np.where(np.isfinite(t_bg), t_bg, 0.0))
    shape = (cam.height, cam.width)
    return CaptureFrame(
        image=color.reshape(shape + (3,)),
        mask=mask_flat.reshape(shape),
        depth=depth_flat.reshape(shape),
        camera=cam,
        pose=pose,
        index=i,
        azimuth_deg=_azimuth_deg(spec, i) if spec.trajectory == "orbit" else None,
    )


def generate_capture(spec, body=None):
    """Render every frame and split it: leading fraction trains, rest tests.

    For orbit trajectories frame order follows azimuth, so the train set is
    the leading ``split_fraction`` of the arc (the front views) and the
    held-out side/back views become the test set.
    """
    body = body or ArticulatedBody.default()
    texture = make_body_texture(
        body, spec.seed, asymmetric=spec.body_asymmetric, bands=spec.texture_bands
    )
    frames = [render_capture_frame(spec, body, texture, i) for i in range(spec.n_frames)]
    n_train = max(1, int(np.floor(spec.split_fraction * spec.n_frames)))
    n_train = min(n_train, spec.n_frames - 1) if spec.split_fraction < 1.0 else spec.n_frames
    train = list(range(n_train))
    test = list(range(n_train, spec.n_frames))
    depths = np.concatenate([f.depth[f.depth > 0].ravel() for f in frames])
    t_far = float(np.ceil(depths.max() * 1.05 * 10.0) / 10.0)
    return Capture(
        frames=frames,
        train_indices=train,
        test_indices=test,
        body=body,
        texture=texture,
        spec=spec,
        t_near=0.05,
        t_far=t_far,
    )


def classify_rays(frame, pixels):
    """Partition a pixel batch by the frame's mask.

    pixels: (n, 2) integer (u, v). Returns (human_idx, other_idx), index
    arrays into the batch that are disjoint and together cover it.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.int64))
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError("pixels must be (n, 2) integer (u, v) pairs")
    on_body = frame.mask[pixels[:, 1], pixels[:, 0]]
    return np.flatnonzero(on_body), np.flatnonzero(~on_body)


# ---------------------------------------------------------------------------
# dataset persistence


def _camera_to_dict(cam):
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "rotation": cam.rotation.tolist(),
        "origin": cam.origin.tolist(),
        "width": cam.width,
        "height": cam.height,
    }


def _camera_from_dict(d):
    return Camera(
        fx=d["fx"],
        fy=d["fy"],
        cx=d["cx"],
        cy=d["cy"],
        rotation=np.array(d["rotation"], dtype=np.float64),
        origin=np.array(d["origin"], dtype=np.float64),
        width=d["width"],
        height=d["height"],
    )


def write_dataset(capture, root):
    """Write frames/masks/depth plus the JSON manifest under root."""
    root = str(root)
    for sub in ("frames", "masks", "depth"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for f in capture.frames:
        stem = f"{f.index:04d}"
        imgio.save_png(os.path.join(root, "frames", stem + ".png"), f.image)
        imgio.save_mask_png(os.path.join(root, "masks", stem + ".png"), f.mask)
        imgio.save_pfm(os.path.join(root, "depth", stem + ".pfm"), f.depth.astype(np.float32))
    manifest = {
        "width": capture.spec.width,
        "height": capture.spec.height,
        "n_frames": capture.spec.n_frames,
        "train": [int(i) for i in capture.train_indices],
        "test": [int(i) for i in capture.test_indices],
        "t_near": capture.t_near,
        "t_far": capture.t_far,
        "cameras": [_camera_to_dict(f.camera) for f in capture.frames],
        "poses": [f.pose.to_dict() for f in capture.frames],
        "azimuths_deg": [f.azimuth_deg for f in capture.frames],
        "body": capture.body.to_dict(),
        "texture": capture.texture.to_dict(),
        "seed": capture.spec.seed,
        "trajectory": capture.spec.trajectory,
    }
    with open(os.path.join(root, "manifest"), "w") as fh:
        json.dump(manifest, fh, indent=1)


@dataclass
class Dataset:
    """A capture as read back from disk (images are quantized to 8 bits)."""

    frames: list
    train_indices: list
    test_indices: list
    body: ArticulatedBody
    texture: BodyTexture
    t_near: float
    t_far: float
    width: int
    height: int


def load_dataset(root):
    """Read a dataset written by ``write_dataset`` (the trainer's only input)."""
    root = str(root)
    with open(os.path.join(root, "manifest")) as fh:
        manifest = json.load(fh)
    frames = []
    for i in range(manifest["n_frames"]):
        stem = f"{i:04d}"
        image = imgio.load_png(os.path.join(root, "frames", stem + ".png"))
        mask = imgio.load_mask_png(os.path.join(root, "masks", stem + ".png"))
        depth = imgio.load_pfm(os.path.join(root, "depth", stem + ".pfm")).astype(np.float64)
        frames.append(
            CaptureFrame(
                image=image.astype(np.float64),
                mask=mask,
                depth=depth,
                camera=_camera_from_dict(manifest["cameras"][i]),
                pose=BodyPose.from_dict(manifest["poses"][i]),
                index=i,
                azimuth_deg=manifest["azimuths_deg"][i],
            )
        )
    return Dataset(
        frames=frames,
        train_indices=list(manifest["train"]),
        test_indices=list(manifest["test"]),
        body=ArticulatedBody.from_dict(manifest["body"]),
        texture=BodyTexture.from_dict(manifest["texture"]),
        t_near=manifest["t_near"],
        t_far=manifest["t_far"],
        width=manifest["width"],
        height=manifest["height"],
    )
