"""Pinhole cameras, ray sampling, and joint human/background volume rendering.

Rendering follows the classic quadrature scheme: stratified coarse samples
feed a coarse radiance field whose weights drive inverse-CDF fine sampling;
per-sample opacities alpha_k = 1 - exp(-sigma_k dt_k) are composited front to
back with transmittance T_k = exp(-sum_{j<k} sigma_j dt_j).

Human and background are sampled separately (the human only inside a padded
box around the posed proxy body, warped to canonical space before querying
the SDF field) and composited *jointly*: the merged list is sorted by ray
distance while every sample keeps the quadrature width of its own branch.
Keeping per-sample widths makes a zero-density sample an exact no-op, so
merging transparent samples from one branch can never perturb the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .autodiff import engine as eng
from .autodiff.engine import Tensor, as_tensor
from .fields import sdf_to_density
from .geometry.body import PosedBody, canonical_direction

__all__ = [
    "Camera",
    "Ray",
    "RaySamples",
    "RenderConfig",
    "FieldSet",
    "RenderResult",
    "generate_ray",
    "generate_rays",
    "pixel_grid",
    "stratified_samples",
    "stratified_batch",
    "hierarchical_samples",
    "hierarchical_batch",
    "composite",
    "composite_samples",
    "merge_ray_samples",
    "ray_box_overlap",
    "render_rays",
    "render_pixel",
    "render_image",
]


# ---------------------------------------------------------------------------
# cameras and rays


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera: intrinsics in pixels, world-from-camera rigid transform.

    Camera space is right-handed with +x right, +y down, +z the viewing
    direction; a world point p maps to rotation^T (p - origin).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3), columns are the camera axes in world frame
    origin: np.ndarray  # (3,) camera center in world frame
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.rotation.shape != (3, 3) or self.origin.shape != (3,):
            raise ValueError("rotation must be (3,3) and origin (3,)")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(self.rotation) < 0:
            raise ValueError(f"extrinsic rotation not orthonormal (defect {err:.2e})")

    @classmethod
    def look_at(cls, eye, target, fx, fy, width, height, cx=None, cy=None, up=(0.0, 0.0, 1.0)):
        """Camera at ``eye`` whose optical axis passes through ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("eye and target coincide")
        forward = forward / norm
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        rnorm = np.linalg.norm(right)
        if rnorm < 1e-12:
            raise ValueError("view direction is parallel to the up vector")
        right = right / rnorm
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward], axis=1)
        if cx is None:
            cx = (width - 1) / 2.0
        if cy is None:
            cy = (height - 1) / 2.0
        return cls(fx, fy, cx, cy, rot, eye, width, height)

    def project(self, points):
        """World points to (pixel uv, camera-space depth z)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cam = (points - self.origin) @ self.rotation  # == R^T (p - o) rowwise
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


def generate_ray(cam, pixel, t_near=0.05, t_far=20.0):
    """World-space ray through the center of the given pixel."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise ValueError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.rotation @ d_cam
    d = d / np.linalg.norm(d)
    return Ray(cam.origin, d, t_near, t_far)


def generate_rays(cam, pixels):
    """Batched ray origins and unit directions for (n, 2) pixel coordinates."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    d_cam = np.stack(
        [
            (pixels[:, 0] - cam.cx) / cam.fx,
            (pixels[:, 1] - cam.cy) / cam.fy,
            np.ones(len(pixels)),
        ],
        axis=1,
    )
    d = d_cam @ cam.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.origin, d.shape).copy()
    return o, d


def pixel_grid(cam):
    """All pixel coordinates of the image, row-major: index k = v*width + u."""
    u, v = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    return np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)


# ---------------------------------------------------------------------------
# sampling along rays


def stratified_batch(t_near, t_far, n, rng):
    """One uniform draw per equal-width bin of [t_near, t_far], per ray.

    Returns (B, n) strictly increasing t values.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    if np.any(t_far <= t_near):
        raise ValueError("t_far must exceed t_near")
    b = len(t_near)
    u = rng.uniform(size=(b, n))
    frac = (np.arange(n) + u) / n
    return t_near[:, None] + frac * (t_far - t_near)[:, None]


def stratified_samples(ray, n, rng):
    """Stratified t values along one ray; see ``stratified_batch``."""
    return stratified_batch(ray.t_near, ray.t_far, n, rng)[0]


def _interval_widths(t, t_far):
    """Per-sample quadrature widths: neighbor differences, terminal to t_far."""
    t = np.atleast_2d(t)
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (t.shape[0],))
    if np.any(t_far < t[:, -1] - 1e-12):
        raise ValueError("t_far precedes the last sample")
    last = np.maximum(t_far - t[:, -1], 0.0)
    return np.concatenate([np.diff(t, axis=1), last[:, None]], axis=1)


def hierarchical_batch(coarse_t, weights, t_near, t_far, n_fine, rng):
    """Inverse-CDF samples from the piecewise-constant PDF over the coarse
    intervals (terminal interval ends at t_far), unioned with the coarse t
    values and sorted. Rays whose weights sum to ~0 fall back to stratified
    sampling of [t_near, t_far].
    """
    coarse_t = np.atleast_2d(np.asarray(coarse_t, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if weights.shape != coarse_t.shape:
        raise ValueError("weights and coarse t values must align")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("coarse weights must be finite and nonnegative")
    b, n = coarse_t.shape
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (b,))
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (b,))

    edges = np.concatenate([coarse_t, t_far[:, None]], axis=1)  # (b, n+1)
    total = weights.sum(axis=1)
    degenerate = total <= 1e-12
    mass = np.where(degenerate[:, None], 1.0, weights)
    mass = mass / mass.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((b, 1)), np.cumsum(mass, axis=1)], axis=1)

    u = rng.uniform(size=(b, n_fine))
    # bin index: number of right edges at or below u
    idx = (u[:, :, None] >= cdf[:, None, 1:]).sum(axis=2)
    idx = np.clip(idx, 0, n - 1)
    lo_cdf = np.take_along_axis(cdf, idx, axis=1)
    bin_mass = np.take_along_axis(mass, idx, axis=1)
    frac = (u - lo_cdf) / np.where(bin_mass > 0, bin_mass, 1.0)
    lo = np.take_along_axis(edges, idx, axis=1)
    hi = np.take_along_axis(edges, idx + 1, axis=1)
    fine = lo + frac * (hi - lo)
    if degenerate.any():
        fine[degenerate] = stratified_batch(
            t_near[degenerate], t_far[degenerate], n_fine, rng
        )
    return np.sort(np.concatenate([coarse_t, fine], axis=1), axis=1)


def hierarchical_samples(coarse_t, coarse_weights, ray, n_fine, rng):
    """Single-ray wrapper over ``hierarchical_batch``."""
    return hierarchical_batch(
        np.asarray(coarse_t)[None, :],
        np.asarray(coarse_weights)[None, :],
        ray.t_near,
        ray.t_far,
        n_fine,
        rng,
    )[0]


# ---------------------------------------------------------------------------
# compositing


def composite(t, sigma, color, t_far, dt=None):
    """Front-to-back quadrature compositing.

    t: (B, N) or (N,) sorted sample distances (constant). sigma: Tensor or
    array (B, N); color: (B, N, 3). dt defaults to neighbor differences with
    the terminal interval ending at t_far; pass explicit per-sample widths
    for merged sample lists so each branch keeps its own quadrature.

    Returns Tensors (rgb (B,3), opacity (B,), expected depth (B,),
    weights (B,N)); 1-D inputs return unbatched shapes.
    """
    t = np.asarray(t, dtype=np.float64)
    single = t.ndim == 1
    t = np.atleast_2d(t)
    if np.any(np.diff(t, axis=1) < 0):
        raise ValueError("samples must be sorted by t")
    sigma = as_tensor(sigma)
    color = as_tensor(color)
    b, n = t.shape
    if single and sigma.data.ndim == 1:
        sigma = eng.reshape(sigma, (1, n))
    if single and color.data.ndim == 2:
        color = eng.reshape(color, (1, n, 3))
    if sigma.data.shape != (b, n) or color.data.shape != (b, n, 3):
        raise ValueError("sigma/color shapes do not match the sample list")
    if dt is None:
        dt = _interval_widths(t, t_far)
    else:
        dt = np.atleast_2d(np.asarray(dt, dtype=np.float64))
        if dt.shape != (b, n) or np.any(dt < 0):
            raise ValueError("dt must be nonnegative with one width per sample")
    ft = sigma.data.dtype
    tau = eng.mul(sigma, as_tensor(dt.astype(ft)))
    alpha = eng.sub(as_tensor(np.ones((), dtype=ft)), eng.exp(eng.neg(tau)))
    trans = eng.exp(eng.neg(eng.exclusive_cumsum(tau, axis=-1)))
    w = eng.mul(trans, alpha)
    acc = eng.tsum(w, axis=1)
    rgb = eng.tsum(eng.mul(eng.reshape(w, (b, n, 1)), color), axis=1)
    depth = eng.tsum(eng.mul(w, as_tensor(t.astype(ft))), axis=1)
    if single:
        return (
            eng.reshape(rgb, (3,)),
            eng.reshape(acc, ()),
            eng.reshape(depth, ()),
            eng.reshape(w, (n,)),
        )
    return rgb, acc, depth, w


# ---------------------------------------------------------------------------
# per-ray sample bookkeeping (single-ray API)

SOURCE_BACKGROUND = 0
SOURCE_HUMAN = 1


@dataclass(eq=False)
class RaySamples:
    """One ray's samples: t values, positions, source tags, field outputs."""

    t: np.ndarray  # (N,) strictly increasing
    positions: np.ndarray  # (N, 3)
    source: np.ndarray  # (N,) int8: 0 background, 1 human
    sigma: Tensor  # (N,)
    color: Tensor  # (N, 3)
    dt: np.ndarray | None = None  # per-sample quadrature widths
    weights: Tensor | None = None  # filled by composite_samples

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.source = np.asarray(self.source, dtype=np.int8)
        if self.t.ndim != 1 or np.any(np.diff(self.t) <= 0):
            raise ValueError("sample t values must be strictly increasing")
        n = len(self.t)
        if self.positions.shape != (n, 3) or self.source.shape != (n,):
            raise ValueError("positions/source do not match the sample count")


def merge_ray_samples(a, b):
    """Union of two RaySamples lists sorted by t (stable in input order)."""
    t = np.concatenate([a.t, b.t])
    order = np.argsort(t, kind="stable")
    dt_a = a.dt if a.dt is not None else _interval_widths(a.t[None], a.t[-1])[0]
    dt_b = b.dt if b.dt is not None else _interval_widths(b.t[None], b.t[-1])[0]
    sigma = eng.gather_rows(eng.concat([a.sigma, b.sigma], axis=0), order)
    color = eng.gather_rows(eng.concat([a.color, b.color], axis=0), order)
    return RaySamples(
        t=t[order],
        positions=np.concatenate([a.positions, b.positions])[order],
        source=np.concatenate([a.source, b.source])[order],
        sigma=sigma,
        color=color,
        dt=np.concatenate([dt_a, dt_b])[order],
    )


def composite_samples(samples, t_far):
    """Composite one RaySamples list; fills samples.weights.

    Returns (color (3,), accumulated opacity, expected depth) Tensors.
    """
    rgb, acc, depth, w = composite(
        samples.t, samples.sigma, samples.color, t_far, dt=samples.dt
    )
    samples.weights = w
    return rgb, acc, depth


# ---------------------------------------------------------------------------
# joint human/background rendering


@dataclass(frozen=True)
class RenderConfig:
    n_coarse: int = 64
    n_fine: int = 64
    n_human: int = 32
    human_pad: float = 0.1  # meters around the posed proxy body
    density_form: str = "laplace_cdf"
    use_delta: bool = True


@dataclass(eq=False)
class FieldSet:
    """The renderable scene: background field plus optional human branch."""

    background: object
    human: object = None
    delta: object = None
    body: object = None


@dataclass(eq=False)
class RenderResult:
    rgb: Tensor = None  # merged color per ray (B, 3)
    acc: Tensor = None
    depth: Tensor = None
    coarse_rgb: Tensor = None
    coarse_acc: Tensor = None
    coarse_depth: Tensor = None
    fine_rgb: Tensor = None
    fine_acc: Tensor = None
    fine_depth: Tensor = None
    fine_t: np.ndarray = None  # (B, N) union sample distances of the fine pass
    fine_sigma: Tensor = None  # (B, N) background density at the fine samples
    human_hit: np.ndarray = None  # (B,) bool, ray entered the padded body box
    human_rgb: Tensor = None  # human-branch-only composite over hit rays
    human_acc: Tensor = None
    human_depth: Tensor = None
    human_t: np.ndarray = None  # (hit rays, n_human) sample distances
    human_sdf: Tensor = None  # SDF at human samples, flat over hit rays
    human_canonical: np.ndarray = None  # canonical sample positions
    human_canonical_dirs: np.ndarray = None  # canonical directions per sample
    merged_t: np.ndarray = None
    merged_source: np.ndarray = None
    merged_weights: Tensor = None


def ray_box_overlap(origins, dirs, lo, hi, t_near, t_far):
    """Slab test: does each ray cross the box within its [t_near, t_far]?

    Returns (hit (B,), t_enter (B,), t_exit (B,)).
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    b = len(origins)
    safe = np.where(np.abs(dirs) < 1e-12, np.where(dirs >= 0, 1e-12, -1e-12), dirs)
    inv = 1.0 / safe
    ta = (lo - origins) * inv
    tb = (hi - origins) * inv
    tmin = np.minimum(ta, tb).max(axis=1)
    tmax = np.maximum(ta, tb).min(axis=1)
    t0 = np.maximum(tmin, np.broadcast_to(np.asarray(t_near, dtype=np.float64), (b,)))
    t1 = np.minimum(tmax, np.broadcast_to(np.asarray(t_far, dtype=np.float64), (b,)))
    return t1 > t0, t0, t1


def _canonical_directions(canonical, frame_dirs):
    """Per-sample canonical travel directions from consecutive warped samples.

    canonical: (B, N, 3); frame_dirs: (B, 3) observation-space unit dirs used
    as the fallback for degenerate (coincident) sample pairs. The first
    sample reuses the direction of the first pair.
    """
    b, n, _ = canonical.shape
    if n == 1:
        return np.broadcast_to(frame_dirs[:, None, :], (b, 1, 3)).copy()
    fallback = np.broadcast_to(frame_dirs[:, None, :], (b, n - 1, 3)).reshape(-1, 3)
    mid = canonical_direction(
        canonical[:, 1:].reshape(-1, 3),
        canonical[:, :-1].reshape(-1, 3),
        fallback=fallback,
    ).reshape(b, n - 1, 3)
    return np.concatenate([mid[:, :1], mid], axis=1)


def render_rays(
    store,
    fields,
    origins,
    dirs,
    t_near,
    t_far,
    *,
    pose=None,
    posed=None,
    config=None,
    rng=None,
    tape=None,
    trainable=True,
):
    """Render a batch of rays; the workhorse behind render_pixel/render_image.

    Background rays get coarse + hierarchical fine samples on the full span;
    if a pose (or prebuilt PosedBody) is given, rays crossing the padded body
    box additionally get stratified human samples, warped to canonical space
    and converted from signed distance to density, then jointly composited.
    """
    cfg = config or RenderConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    b = len(origins)
    near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (b,))
    far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (b,))

    out = RenderResult(human_hit=np.zeros(b, dtype=bool))

    # background: coarse pass drives fine sampling
    nc = cfg.n_coarse
    t_c = stratified_batch(near, far, nc, rng)
    pos_c = (origins[:, None, :] + t_c[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    rgb_c, sig_c = fields.background.query(
        store, pos_c, np.repeat(dirs, nc, axis=0), "coarse", tape, trainable
    )
    sig_c = eng.reshape(sig_c, (b, nc))
    rgb_c = eng.reshape(rgb_c, (b, nc, 3))
    out.coarse_rgb, out.coarse_acc, out.coarse_depth, w_c = composite(t_c, sig_c, rgb_c, far)

    t_u = hierarchical_batch(t_c, w_c.data, near, far, cfg.n_fine, rng)
    nu = t_u.shape[1]
    pos_u = (origins[:, None, :] + t_u[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    rgb_f, sig_f = fields.background.query(
        store, pos_u, np.repeat(dirs, nu, axis=0), "fine", tape, trainable
    )
    sig_f = eng.reshape(sig_f, (b, nu))
    rgb_f = eng.reshape(rgb_f, (b, nu, 3))
    out.fine_rgb, out.fine_acc, out.fine_depth, _ = composite(t_u, sig_f, rgb_f, far)
    out.fine_t = t_u
    out.fine_sigma = sig_f

    out.rgb, out.acc, out.depth = out.fine_rgb, out.fine_acc, out.fine_depth
    if fields.human is None or (pose is None and posed is None):
        return out

    # human branch on rays crossing the padded posed-body box
    if posed is None:
        posed = PosedBody(fields.body, pose)
    verts = posed.posed_vertices
    lo = verts.min(axis=0) - cfg.human_pad
    hi = verts.max(axis=0) + cfg.human_pad
    hit, box_t0, box_t1 = ray_box_overlap(origins, dirs, lo, hi, near, far)
    out.human_hit = hit
    if not hit.any():
        return out
    hidx = np.flatnonzero(hit)
    bh, nh = len(hidx), cfg.n_human

    t_h = stratified_batch(box_t0[hidx], box_t1[hidx], nh, rng)
    x_frame = (
        origins[hidx][:, None, :] + t_h[:, :, None] * dirs[hidx][:, None, :]
    ).reshape(-1, 3)
    x_can = posed.canonicalize(x_frame)

    frame_index = pose.frame_index if pose is not None else posed.pose.frame_index
    if cfg.use_delta and fields.delta is not None:
        offset = fields.delta.query(
            store,
            x_frame,
            np.full(len(x_frame), frame_index, dtype=np.int64),
            tape,
            trainable,
        )
        if tape is None:
            x_query = x_can.astype(store.dtype) + offset.data
        else:
            x_query = eng.add(as_tensor(x_can.astype(store.dtype)), offset)
    else:
        x_query = x_can
    x_can_now = x_query.data if isinstance(x_query, Tensor) else np.asarray(x_query)

    d_can = _canonical_directions(x_can_now.reshape(bh, nh, 3), dirs[hidx]).reshape(-1, 3)
    rgb_h, s_h = fields.human.query(store, x_query, d_can, tape, trainable)
    beta = fields.human.beta(store, tape, trainable)
    sig_h = sdf_to_density(s_h, beta, cfg.density_form)
    sig_h = eng.reshape(sig_h, (bh, nh))
    rgb_h = eng.reshape(rgb_h, (bh, nh, 3))
    out.human_t = t_h
    out.human_sdf = s_h
    out.human_canonical = x_can_now
    out.human_canonical_dirs = d_can

    out.human_rgb, out.human_acc, out.human_depth, _ = composite(
        t_h, sig_h, rgb_h, box_t1[hidx]
    )

    # merge: background union samples of the hit rays + their human samples,
    # sorted by t, each sample keeping its own branch's quadrature width
    sig_bg_h = eng.gather_rows(sig_f, hidx)
    rgb_bg_h = eng.reshape(
        eng.gather_rows(eng.reshape(rgb_f, (b, nu * 3)), hidx), (bh, nu, 3)
    )
    dt_bg = _interval_widths(t_u, far)[hidx]
    dt_h = _interval_widths(t_h, box_t1[hidx])

    t_cat = np.concatenate([t_u[hidx], t_h], axis=1)
    dt_cat = np.concatenate([dt_bg, dt_h], axis=1)
    src_cat = np.concatenate(
        [
            np.full((bh, nu), SOURCE_BACKGROUND, dtype=np.int8),
            np.full((bh, nh), SOURCE_HUMAN, dtype=np.int8),
        ],
        axis=1,
    )
    ntot = nu + nh
    order = np.argsort(t_cat, axis=1, kind="stable")
    t_sorted = np.take_along_axis(t_cat, order, axis=1)
    dt_sorted = np.take_along_axis(dt_cat, order, axis=1)
    src_sorted = np.take_along_axis(src_cat, order, axis=1)

    sig_cat = eng.permute_along_last(eng.concat([sig_bg_h, sig_h], axis=-1), order)
    flat_order = (np.arange(bh)[:, None] * ntot + order).ravel()
    rgb_cat = eng.reshape(
        eng.gather_rows(
            eng.reshape(eng.concat([rgb_bg_h, rgb_h], axis=1), (bh * ntot, 3)),
            flat_order,
        ),
        (bh, ntot, 3),
    )
    m_rgb, m_acc, m_depth, m_w = composite(
        t_sorted, sig_cat, rgb_cat, far[hidx], dt=dt_sorted
    )
    out.merged_t = t_sorted
    out.merged_source = src_sorted
    out.merged_weights = m_w

    if hit.all():
        out.rgb, out.acc, out.depth = m_rgb, m_acc, m_depth
        return out
    # rays that missed the box keep their background-only result
    midx = np.flatnonzero(~hit)
    inv = np.empty(b, dtype=np.int64)
    inv[np.concatenate([hidx, midx])] = np.arange(b)
    out.rgb = eng.gather_rows(
        eng.concat([m_rgb, eng.gather_rows(out.fine_rgb, midx)], axis=0), inv
    )
    out.acc = eng.gather_rows(
        eng.concat(
            [eng.reshape(m_acc, (bh, 1)), eng.gather_rows(eng.reshape(out.fine_acc, (b, 1)), midx)],
            axis=0,
        ),
        inv,
    )
    out.acc = eng.reshape(out.acc, (b,))
    out.depth = eng.gather_rows(
        eng.concat(
            [eng.reshape(m_depth, (bh, 1)), eng.gather_rows(eng.reshape(out.fine_depth, (b, 1)), midx)],
            axis=0,
        ),
        inv,
    )
    out.depth = eng.reshape(out.depth, (b,))
    return out


def render_pixel(cam, pixel, pose, fields, store, *, config=None, seed=0, t_near=0.05, t_far=20.0):
    """One pixel: (color (3,), human opacity, background opacity).

    Deterministic for a fixed seed; rays missing the body box report zero
    human opacity.
    """
    ray = generate_ray(cam, pixel, t_near, t_far)
    rng = np.random.default_rng(seed)
    out = render_rays(
        store,
        fields,
        ray.origin[None],
        ray.direction[None],
        ray.t_near,
        ray.t_far,
        pose=pose,
        config=config,
        rng=rng,
    )
    human_opacity = float(out.human_acc.data[0]) if out.human_hit[0] else 0.0
    return out.rgb.data[0].copy(), human_opacity, float(out.fine_acc.data[0])


def render_image(
    cam,
    fields,
    store,
    *,
    pose=None,
    config=None,
    seed=0,
    t_near=0.05,
    t_far=20.0,
    chunk=2048,
):
    """Full-frame render; returns float arrays keyed rgb/acc/depth/human_acc."""
    cfg = config or RenderConfig()
    rng = np.random.default_rng(seed)
    pixels = pixel_grid(cam)
    origins, dirs = generate_rays(cam, pixels)
    posed = None
    if pose is not None and fields.body is not None:
        posed = PosedBody(fields.body, pose)
    n = len(pixels)
    rgb = np.zeros((n, 3))
    acc = np.zeros(n)
    depth = np.zeros(n)
    human_acc = np.zeros(n)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        out = render_rays(
            store,
            fields,
            origins[sl],
            dirs[sl],
            t_near,
            t_far,
            pose=pose,
            posed=posed,
            config=cfg,
            rng=rng,
        )
        rgb[sl] = out.rgb.data
        acc[sl] = out.acc.data
        depth[sl] = out.depth.data
        if out.human_hit.any():
            human_acc[np.flatnonzero(out.human_hit) + start] = out.human_acc.data
    h, w = cam.height, cam.width
    return {
        "rgb": rgb.reshape(h, w, 3),
        "acc": acc.reshape(h, w),
        "depth": depth.reshape(h, w),
        "human_acc": human_acc.reshape(h, w),
    }
