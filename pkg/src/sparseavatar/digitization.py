"""Single-image human digitization and its co-training hooks.

This branch predicts a complete 3D human (occupancy in [0, 1] plus color)
from one image, extracts a mesh at isolevel 0.5, and exchanges supervision
with the canonical human field in both directions:

- field <- digitizer: surface points of the digitized mesh pin the field's
  SDF to zero (``hdn_geometry_loss``) and the digitized colors act as
  pseudo ground truth for the field's radiance (``hdn_color_loss``);
- digitizer <- field: ``finetune_step`` renders the avatar in a sampled
  novel pose, then regresses the digitizer's occupancy to the field's
  inside/outside indicator and its color to the field's radiance along the
  inward surface normal, updating digitizer parameters only.

Two interchangeable oracle modes expose identical samplers: ``AnalyticMode``
reads ground-truth synthetic geometry/texture (default supervision source;
pretrained single-image reconstruction weights are out of scope), and
``LearnedMode`` wraps a small trainable convolutional encoder with MLP heads
so the fine-tuning path is exercised end to end. Field and digitizer updates
alternate; no step mutates both parameter groups.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .autodiff import engine as eng
from .autodiff.engine import Tensor, as_tensor
from .autodiff.nn import MLP, MLPSpec
from .geometry import VertexGrid, marching_cubes
from .geometry.body import BodyPose, PosedBody, segment_distance
from .geometry.mesh import sample_surface_points
from .rendering import RenderConfig, render_image
from .synthscene import capsule_union_distance, posed_capsules, shade

__all__ = [
    "fibonacci_directions",
    "PixelFeatureMap",
    "HDNConfig",
    "DigitizationNet",
    "AnalyticMode",
    "LearnedMode",
    "DigitizedHuman",
    "digitize",
    "sample_digitized_points",
    "hdn_geometry_loss",
    "hdn_color_loss",
    "default_joint_limits",
    "sample_novel_pose",
    "surface_band_points",
    "finetune_step",
]


def fibonacci_directions(n):
    """n near-uniform unit directions via the Fibonacci sphere spiral."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


# ---------------------------------------------------------------------------
# pixel-aligned features


@dataclass
class PixelFeatureMap:
    """Per-pixel feature vectors at full image resolution.

    ``data`` is a (height*width, channels) Tensor in row-major pixel order;
    ``sample`` bilinearly interpolates it at continuous pixel coordinates.
    """

    data: Tensor
    height: int
    width: int

    @property
    def channels(self):
        return self.data.data.shape[1]

    def sample(self, uv):
        """Bilinear feature lookup at (n, 2) pixel (u, v) coordinates."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        u = np.clip(uv[:, 0], 0.0, self.width - 1.0)
        v = np.clip(uv[:, 1], 0.0, self.height - 1.0)
        u0 = np.clip(np.floor(u).astype(np.int64), 0, self.width - 2)
        v0 = np.clip(np.floor(v).astype(np.int64), 0, self.height - 2)
        fu = (u - u0)[:, None]
        fv = (v - v0)[:, None]
        out = None
        for du, dv, wgt in (
            (0, 0, (1 - fu) * (1 - fv)),
            (1, 0, fu * (1 - fv)),
            (0, 1, (1 - fu) * fv),
            (1, 1, fu * fv),
        ):
            idx = (v0 + dv) * self.width + (u0 + du)
            term = eng.mul(eng.gather_rows(self.data, idx), as_tensor(wgt))
            out = term if out is None else eng.add(out, term)
        return out


def _conv_indices(h, w, k, stride):
    """Row indices for im2col with replicate edge padding.

    Output pixel (i, j) reads the k x k neighborhood around input pixel
    (i*stride, j*stride); out-of-range taps clamp to the border.
    """
    ys = np.arange(0, h, stride)
    xs = np.arange(0, w, stride)
    offs = np.arange(k) - k // 2
    rows = np.clip(ys[:, None] + offs[None, :], 0, h - 1)  # (h2, k)
    cols = np.clip(xs[:, None] + offs[None, :], 0, w - 1)  # (w2, k)
    idx = rows[:, None, :, None] * w + cols[None, :, None, :]  # (h2, w2, k, k)
    return len(ys), len(xs), idx.ravel()


# ---------------------------------------------------------------------------
# learned digitizer network


@dataclass(frozen=True)
class HDNConfig:
    mid_channels: int = 12
    feat_channels: int = 16  # occupancy feature width
    color_channels: int = 12
    head_width: int = 32
    kernel: int = 3


class DigitizationNet:
    """Small strided-conv encoder with occupancy and color MLP heads.

    The occupancy encoder downsamples twice (stride 2 each) and the result
    is bilinearly upsampled back to input resolution; the color encoder is
    one full-resolution convolution over the image concatenated with the
    occupancy features, so color is conditioned on them. Heads map a sampled
    feature plus the point's camera distance to occupancy / rgb.
    """

    def __init__(self, store, rng, config=None, name="hdn"):
        self.config = config or HDNConfig()
        self.name = name
        c = self.config
        k2 = c.kernel * c.kernel
        self._register_conv(store, rng, "conv1", k2 * 3, c.mid_channels)
        self._register_conv(store, rng, "conv2", k2 * c.mid_channels, c.feat_channels)
        self._register_conv(store, rng, "convc", k2 * (3 + c.feat_channels), c.color_channels)
        self.head_v = MLP(
            store,
            f"{name}/head_v",
            MLPSpec(c.feat_channels + 1, (c.head_width,), 1, out_activation="sigmoid"),
            rng,
        )
        self.head_c = MLP(
            store,
            f"{name}/head_c",
            MLPSpec(c.color_channels + 1, (c.head_width,), 3, out_activation="sigmoid"),
            rng,
        )

    def _register_conv(self, store, rng, layer, fan_in, fan_out):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        store.register(f"{self.name}/{layer}/W", w)
        store.register(f"{self.name}/{layer}/b", np.zeros(fan_out))

    def _conv(self, store, layer, x, h, w, stride, tape, trainable):
        k = self.config.kernel
        h2, w2, idx = _conv_indices(h, w, k, stride)
        if isinstance(x, Tensor):
            cols = eng.reshape(
                eng.gather_rows(x, idx), (h2 * w2, k * k * x.data.shape[1])
            )
        else:
            cols = as_tensor(x[idx].reshape(h2 * w2, k * k * x.shape[1]))
        weight = store.tensor(f"{self.name}/{layer}/W", tape, trainable)
        bias = store.tensor(f"{self.name}/{layer}/b", tape, trainable)
        return eng.add(eng.matmul(cols, weight), bias), h2, w2

    @staticmethod
    def _upsample(x, h2, w2, height, width):
        """Bilinear resize of a flat (h2*w2, C) map to (height*width, C)."""
        sy = h2 / height
        sx = w2 / width
        v = np.clip((np.arange(height) + 0.5) * sy - 0.5, 0.0, h2 - 1.0)
        u = np.clip((np.arange(width) + 0.5) * sx - 0.5, 0.0, w2 - 1.0)
        vg, ug = np.meshgrid(v, u, indexing="ij")
        vg = vg.ravel()
        ug = ug.ravel()
        v0 = np.clip(np.floor(vg).astype(np.int64), 0, h2 - 2)
        u0 = np.clip(np.floor(ug).astype(np.int64), 0, w2 - 2)
        fv = (vg - v0)[:, None]
        fu = (ug - u0)[:, None]
        out = None
        for du, dv, wgt in (
            (0, 0, (1 - fu) * (1 - fv)),
            (1, 0, fu * (1 - fv)),
            (0, 1, (1 - fu) * fv),
            (1, 1, fu * fv),
        ):
            idx = (v0 + dv) * w2 + (u0 + du)
            term = eng.mul(eng.gather_rows(x, idx), as_tensor(wgt))
            out = term if out is None else eng.add(out, term)
        return out

    def encode(self, store, image, tape=None, trainable=True):
        """Image (H, W, 3) in [0, 1] -> (occupancy features, color features)."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("expected an (H, W, 3) image")
        height, width = image.shape[:2]
        flat = image.reshape(height * width, 3)

        h1, h1h, h1w = self._conv(store, "conv1", flat, height, width, 2, tape, trainable)
        h1 = eng.relu(h1)
        h2, h2h, h2w = self._conv(store, "conv2", h1, h1h, h1w, 2, tape, trainable)
        h2 = eng.relu(h2)
        fv = self._upsample(h2, h2h, h2w, height, width)

        joint = eng.concat([as_tensor(flat), fv], axis=-1)
        fc, _, _ = self._conv(store, "convc", joint, height, width, 1, tape, trainable)
        fc = eng.relu(fc)
        return (
            PixelFeatureMap(fv, height, width),
            PixelFeatureMap(fc, height, width),
        )

    @staticmethod
    def _project(camera, points):
        cam = (np.atleast_2d(points) - camera.origin) @ camera.rotation
        z = cam[:, 2]
        valid = z > 1e-9
        safe_z = np.where(valid, z, 1.0)
        u = cam[:, 0] / safe_z * camera.fx + camera.cx
        v = cam[:, 1] / safe_z * camera.fy + camera.cy
        valid &= (u > -0.5) & (u < camera.width - 0.5)
        valid &= (v > -0.5) & (v < camera.height - 0.5)
        dist = np.linalg.norm(cam, axis=1)
        return np.stack([u, v], axis=1), dist, valid

    def occupancy(self, store, feat_v, points, camera, tape=None, trainable=True):
        """In/outside probability for world points seen through ``camera``.

        Points outside the camera frustum have occupancy exactly 0.
        """
        uv, dist, valid = self._project(camera, points)
        feats = feat_v.sample(uv)
        x = eng.concat([feats, as_tensor(dist[:, None])], axis=-1)
        occ = eng.reshape(self.head_v.forward(store, x, tape, trainable), (len(uv),))
        return eng.where_mask(valid, occ, as_tensor(np.zeros_like(dist)))

    def color(self, store, feat_c, points, camera, tape=None, trainable=True):
        """RGB prediction for world points (meaningful inside the frustum)."""
        uv, dist, _ = self._project(camera, points)
        feats = feat_c.sample(uv)
        x = eng.concat([feats, as_tensor(dist[:, None])], axis=-1)
        return self.head_c.forward(store, x, tape, trainable)


# ---------------------------------------------------------------------------
# oracle modes and digitization


@dataclass
class AnalyticMode:
    """Ground-truth synthetic occupancy/texture as the digitizer oracle."""

    body: object
    texture: object
    pose: BodyPose = None
    tau: float = 0.004  # occupancy transition width in meters

    kind = "analytic"


@dataclass
class LearnedMode:
    """A trainable DigitizationNet acting as the digitizer."""

    net: DigitizationNet
    store: object

    kind = "learned"


@dataclass
class DigitizedHuman:
    """Occupancy/color samplers plus the mesh extracted at isolevel 0.5."""

    occupancy: object  # (n, 3) world points -> (n,) in [0, 1]
    color: object  # (n, 3) world points -> (n, 3) rgb
    mesh: object
    camera: object
    kind: str


def _analytic_samplers(mode):
    pose = mode.pose if mode.pose is not None else BodyPose.identity(mode.body.n_bones)
    pa, pb, radii = posed_capsules(mode.body, pose)

    def occupancy(points):
        sdf = capsule_union_distance(points, pa, pb, radii)
        return 1.0 / (1.0 + np.exp(np.clip(sdf / mode.tau, -60.0, 60.0)))

    def color(points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dists = np.stack(
            [segment_distance(points, a, b) - r for a, b, r in zip(pa, pb, radii)]
        )
        bone = dists.argmin(axis=0)
        a = pa[bone]
        axis = pb[bone] - a
        frac = np.clip(
            np.einsum("ij,ij->i", points - a, axis) / np.einsum("ij,ij->i", axis, axis),
            0.0,
            1.0,
        )
        offset = points - (a + frac[:, None] * axis)
        norm = np.linalg.norm(offset, axis=1, keepdims=True)
        normal = np.where(norm > 1e-12, offset / np.where(norm > 1e-12, norm, 1.0), (0.0, 0.0, 1.0))
        return shade(mode.texture.color_at(bone, frac), normal)

    lo = (pa - radii[:, None]).min(axis=0)
    hi = (pb + radii[:, None]).max(axis=0)
    lo = np.minimum(lo, (pb - radii[:, None]).min(axis=0)) - 0.15
    hi = np.maximum(hi, (pa + radii[:, None]).max(axis=0)) + 0.15
    return occupancy, color, (lo, hi), pa, pb


def digitize(image, camera, mode, resolution=48, bounds=None):
    """Single image -> occupancy field, color field, and a mesh at 0.5.

    The samplers answer any world-space point through the image features at
    its pixel projection plus its camera distance (analytic mode answers
    from scene ground truth instead). Deterministic: the same image yields
    the identical mesh.
    """
    if mode.kind == "analytic":
        occupancy, color, auto_bounds, pa, pb = _analytic_samplers(mode)
        probe = np.vstack([pa, pb])
    elif mode.kind == "learned":
        feat_v, feat_c = mode.net.encode(mode.store, image, tape=None, trainable=False)

        def occupancy(points):
            return mode.net.occupancy(mode.store, feat_v, points, camera).data

        def color(points):
            return mode.net.color(mode.store, feat_c, points, camera).data

        center = np.array([0.0, 0.0, 0.9])
        auto_bounds = (center - 1.2, center + 1.2)
        lo, hi = bounds if bounds is not None else auto_bounds
        corners = np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
        )
        probe = corners
    else:
        raise ValueError(f"unknown digitization mode {mode.kind!r}")

    _, _, visible = DigitizationNet._project(camera, probe)
    if not visible.any():
        raise ValueError("human fully outside the camera frustum")

    mesh, _ = marching_cubes(
        occupancy, resolution, bounds if bounds is not None else auto_bounds, isolevel=0.5
    )
    return DigitizedHuman(
        occupancy=occupancy, color=color, mesh=mesh, camera=camera, kind=mode.kind
    )


def sample_digitized_points(digitized, posed, n, rng_seed=0):
    """Surface points of the digitized mesh, in world and canonical space."""
    world = sample_surface_points(digitized.mesh, n, rng_seed=rng_seed)
    canonical = posed.canonicalize(world)
    return world, canonical


# ---------------------------------------------------------------------------
# supervision losses toward the field


def hdn_geometry_loss(field, store, x_canonical, tape=None, trainable=True):
    """Mean squared signed distance at digitized surface points: the field's
    zero set is pulled onto the digitizer's surface."""
    x_canonical = np.atleast_2d(np.asarray(x_canonical, dtype=np.float64))
    if len(x_canonical) == 0:
        warnings.warn("hdn_geometry_loss: empty point set, loss is 0", stacklevel=2)
        return as_tensor(np.zeros(()))
    s = field.sdf(store, x_canonical, tape, trainable)
    return eng.tmean(eng.square(s))


def hdn_color_loss(
    field,
    store,
    x_canonical,
    directions,
    digitized,
    *,
    x_world=None,
    tape=None,
    trainable=True,
):
    """Mean over points and viewing directions of the squared gap between
    the field's radiance and the digitizer's (view-independent) color.

    ``x_world`` gives the positions at which the digitizer is queried (the
    posed locations of the canonical points); it defaults to the canonical
    points themselves, which is only correct for an identity pose.
    """
    x_canonical = np.atleast_2d(np.asarray(x_canonical, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if len(directions) < 1:
        raise ValueError("need at least one viewing direction")
    target = np.asarray(
        digitized.color(x_world if x_world is not None else x_canonical),
        dtype=np.float64,
    )
    total = None
    for d in directions:
        rgb, _ = field.query(store, x_canonical, np.broadcast_to(d, x_canonical.shape), tape, trainable)
        term = eng.tsum(eng.square(eng.sub(rgb, as_tensor(target))))
        total = term if total is None else eng.add(total, term)
    denom = as_tensor(np.asarray(float(len(x_canonical) * len(directions))))
    return eng.div(total, denom)


# ---------------------------------------------------------------------------
# novel poses and fine-tuning of the digitizer


def default_joint_limits(body):
    """Maximum rotation angle (radians) per bone for novel-pose sampling."""
    limits = np.empty(body.n_bones)
    for i, cap in enumerate(body.capsules):
        name = cap.name
        if "lower_arm" in name or "upper_arm" in name:
            limits[i] = 0.9
        elif "lower_leg" in name:
            limits[i] = 0.8
        elif "upper_leg" in name:
            limits[i] = 0.7
        elif name == "head":
            limits[i] = 0.4
        else:
            limits[i] = 0.2
    return limits


def sample_novel_pose(body, rng, scale=0.4, limits=None):
    """Random pose: per-bone random axis, angle folded into the joint limit."""
    limits = default_joint_limits(body) if limits is None else np.asarray(limits)
    axes = rng.normal(size=(body.n_bones, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.minimum(np.abs(rng.normal(0.0, scale, size=body.n_bones)), limits)
    return BodyPose(rotations=axes * angles[:, None])


def surface_band_points(field, store, body, rng, n, zeta, max_attempts=4):
    """Canonical points within |s| <= zeta of the field's current surface.

    Candidates start on the proxy-body surface, take one Newton step along
    the finite-difference SDF gradient onto the zero set, then spread within
    the band; only points verified to satisfy |s| <= zeta are kept. Returns
    None when the field has no reachable zero crossing (degenerate surface).
    """
    kept = []
    have = 0
    for _ in range(max_attempts):
        cand = sample_surface_points(
            body.canonical_mesh, 2 * n, rng_seed=int(rng.integers(2**31))
        )
        cand = cand + rng.normal(0.0, zeta, size=cand.shape)
        s = field.sdf(store, cand).data
        g = field.spatial_gradient(store, cand).data
        g2 = np.maximum((g * g).sum(axis=1), 1e-12)
        projected = cand - (s / g2)[:, None] * g
        ghat = g / np.sqrt(g2)[:, None]
        offsets = rng.uniform(-0.9 * zeta, 0.9 * zeta, size=len(cand))
        trial = projected + offsets[:, None] * ghat
        s_trial = field.sdf(store, trial).data
        ok = np.abs(s_trial) <= zeta
        if ok.any():
            kept.append(trial[ok])
            have += int(ok.sum())
        if have >= n:
            break
    if have == 0:
        return None
    return np.concatenate(kept)[:n]


def finetune_step(
    field,
    store,
    hdn,
    optimizer,
    body,
    camera,
    pose_sampler,
    rng,
    *,
    fields=None,
    zeta=0.02,
    n_points=2000,
    lambda_fts=1.0,
    lambda_ftc=1.0,
    render_config=None,
    image=None,
    pose=None,
):
    """One digitizer update against the frozen field in a novel pose.

    Renders the avatar in a sampled pose, samples points within ``zeta`` of
    the field surface, and takes one Adam step on digitizer parameters so
    its occupancy matches the field's inside/outside indicator and its color
    matches the field's radiance along the inward surface normal. Returns a
    stats dict; a degenerate surface (no zero crossing) skips the step.
    """
    pose = pose if pose is not None else pose_sampler(rng)
    x_ft = surface_band_points(field, store, body, rng, n_points, zeta)
    if x_ft is None:
        warnings.warn("finetune_step skipped: field surface has no zero crossing", stacklevel=2)
        return {"skipped": True, "l_fts": np.nan, "l_ftc": np.nan, "total": np.nan, "n_points": 0}

    if image is None:
        if fields is None:
            raise ValueError("finetune_step needs either an image or a FieldSet to render one")
        cfg = render_config or RenderConfig(n_coarse=24, n_fine=24, n_human=16, use_delta=False)
        image = render_image(
            camera, fields, store, pose=pose, config=cfg, seed=int(rng.integers(2**31))
        )["rgb"]

    posed = PosedBody(body, pose)
    vertex_idx = VertexGrid(body.canonical_mesh.vertices).query(x_ft)
    x_world = posed.deform(x_ft, vertex_idx)

    s_vals = field.sdf(store, x_ft).data
    indicator = (s_vals <= 0.0).astype(np.float64)
    grad = field.spatial_gradient(store, x_ft).data
    norms = np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)
    d_perp = -grad / norms  # inward: the direction of a perpendicular ray
    c_target = field.query(store, x_ft, d_perp)[0].data

    tape = Tape()
    feat_v, feat_c = hdn.encode(store, image, tape)
    occ = hdn.occupancy(store, feat_v, x_world, camera, tape)
    col = hdn.color(store, feat_c, x_world, camera, tape)
    l_fts = eng.tmean(eng.square(eng.sub(occ, as_tensor(indicator))))
    l_ftc = eng.tmean(eng.tsum(eng.square(eng.sub(col, as_tensor(c_target))), axis=1))
    total = eng.add(
        eng.mul(l_fts, as_tensor(np.asarray(float(lambda_fts)))),
        eng.mul(l_ftc, as_tensor(np.asarray(float(lambda_ftc)))),
    )
    store.zero_grad()
    eng.backward(tape, total)
    optimizer.step()
    return {
        "skipped": False,
        "l_fts": float(l_fts.data),
        "l_ftc": float(l_ftc.data),
        "total": float(total.data),
        "n_points": len(x_ft),
    }
