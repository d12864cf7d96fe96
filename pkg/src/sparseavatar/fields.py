"""Neural scene fields: background radiance, canonical human SDF, pose correction.

Three learnable components share one ParamStore:

* ``BackgroundField`` — classic coarse+fine radiance field mapping an encoded
  position and view direction to (color, density).
* ``HumanField`` — the canonical human: an MLP trunk produces a signed
  distance (negative inside the body) plus a geometry feature; a separate
  head turns the feature and an encoded canonical direction into color. The
  signed distance is converted to density through a Laplace-CDF transform
  with a learnable sharpness ``beta``.
* ``DeltaField`` — a small per-frame corrective offset field that absorbs
  pose-estimation error during training.

Field inputs are plain arrays (sample positions are constants; gradients
flow only into parameters), so all input encodings run in vectorized numpy
outside the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import engine as eng
from .autodiff import Embedding, EncodingSpec, MLP, MLPSpec, encode_array, positional_encode
from .autodiff.engine import Tensor, as_tensor
from .autodiff.nn import he_init

__all__ = [
    "BackgroundConfig",
    "BackgroundField",
    "HumanConfig",
    "HumanField",
    "DeltaConfig",
    "DeltaField",
    "sdf_to_density",
    "query_background",
    "query_human",
    "apply_delta",
    "BETA_INIT",
]

BETA_INIT = 0.1


def _inverse_softplus(y):
    return float(np.log(np.expm1(y)))


# ---------------------------------------------------------------------------
# background radiance field


@dataclass(frozen=True)
class BackgroundConfig:
    pos_bands: int = 10
    dir_bands: int = 4
    trunk_width: int = 64
    trunk_depth: int = 4
    skips: tuple = (2,)
    color_width: int = 32


class BackgroundField:
    """Coarse and fine (color, density) fields over world position + direction."""

    def __init__(self, store, rng, config=None, name="bkgr"):
        self.config = config or BackgroundConfig()
        self.name = name
        c = self.config
        self.pos_spec = EncodingSpec(c.pos_bands)
        self.dir_spec = EncodingSpec(c.dir_bands)
        enc_x = self.pos_spec.out_dim(3)
        enc_d = self.dir_spec.out_dim(3)
        self.levels = {}
        for level in ("coarse", "fine"):
            trunk = MLP(
                store,
                f"{name}/{level}/trunk",
                MLPSpec(enc_x, (c.trunk_width,) * (c.trunk_depth - 1), c.trunk_width,
                        activation="relu", out_activation="relu", skips=c.skips),
                rng,
            )
            sigma = MLP(store, f"{name}/{level}/sigma", MLPSpec(c.trunk_width, (), 1), rng)
            color = MLP(
                store,
                f"{name}/{level}/color",
                MLPSpec(c.trunk_width + enc_d, (c.color_width,), 3, out_activation="sigmoid"),
                rng,
            )
            self.levels[level] = (trunk, sigma, color)

    def query(self, store, x, d, level="coarse", tape=None, trainable=True):
        """(color, density) at world points x viewed along unit directions d.

        Returns tensors of shape (n, 3) and (n,); density is softplus-mapped
        so it is nonnegative by construction.
        """
        if level not in self.levels:
            raise ValueError(f"unknown level {level!r}")
        trunk, sigma, color = self.levels[level]
        x = np.atleast_2d(np.asarray(x, dtype=store.dtype))
        d = np.atleast_2d(np.asarray(d, dtype=store.dtype))
        feat = trunk.forward(store, encode_array(x, self.pos_spec), tape, trainable)
        raw_sigma = sigma.forward(store, feat, tape, trainable)
        density = eng.reshape(eng.softplus(raw_sigma), (len(x),))
        enc_d = as_tensor(encode_array(d, self.dir_spec))
        rgb = color.forward(store, eng.concat([feat, enc_d], axis=-1), tape, trainable)
        return rgb, density


def query_background(field, store, x, d, level="coarse", tape=None, trainable=True):
    return field.query(store, x, d, level, tape, trainable)


# ---------------------------------------------------------------------------
# canonical human field


@dataclass(frozen=True)
class HumanConfig:
    pos_bands: int = 6
    dir_bands: int = 4
    trunk_width: int = 64
    trunk_depth: int = 4
    skips: tuple = (2,)
    feature_width: int = 32
    color_width: int = 32
    center: tuple = (0.0, 0.0, 0.9)
    init_radius: float = 0.5
    # hidden softplus sharpness: approximates relu while staying smooth
    act_beta: float = 100.0


def _sphere_init(spec, radius):
    """Weight initializer that starts the SDF close to a centered sphere.

    Hidden weights follow the usual variance-preserving normal; the rows
    that feed from sinusoid features are zeroed so only the raw coordinates
    drive the initial distance; the SDF output unit gets a positive constant
    mean and bias -radius, yielding s(x) ~ |x| - radius.
    """
    n_layers = len(spec.hidden) + 1

    def init(layer, fan_in, fan_out, r, dt):
        if layer == n_layers - 1:
            w = r.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            w[:, 0] = r.normal(np.sqrt(np.pi / fan_in), 1e-4, size=fan_in)
            b = np.zeros(fan_out)
            b[0] = -radius
            return w.astype(dt), b.astype(dt)
        w = r.normal(0.0, np.sqrt(2.0 / fan_out), size=(fan_in, fan_out))
        if layer == 0:
            w[3:, :] = 0.0  # silence sinusoid rows; rows 0..2 are raw xyz
        elif layer in spec.skips:
            prev = fan_in - spec.input_dim
            w[prev + 3 :, :] = 0.0  # same for the skip copy of the input
        return w.astype(dt), np.zeros(fan_out, dtype=dt)

    return init


class HumanField:
    """Canonical-space SDF + view-dependent color for the human.

    The signed distance uses the negative-inside convention. With
    ``tie_mirror=True`` the field reads only the mirror-invariant form of
    its inputs (|x|-folded across the sagittal plane, direction folded
    consistently), which makes the field exactly equal at mirrored queries.
    """

    def __init__(self, store, rng, config=None, name="human", tie_mirror=False):
        self.config = config or HumanConfig()
        self.name = name
        self.tie_mirror = tie_mirror
        c = self.config
        self.pos_spec = EncodingSpec(c.pos_bands)
        self.dir_spec = EncodingSpec(c.dir_bands)
        enc_x = self.pos_spec.out_dim(3)
        enc_d = self.dir_spec.out_dim(3)
        trunk_spec = MLPSpec(
            enc_x,
            (c.trunk_width,) * (c.trunk_depth - 1),
            1 + c.feature_width,
            activation="softplus",
            act_param=c.act_beta,
            skips=c.skips,
        )
        self.trunk = MLP(store, f"{name}/trunk", trunk_spec, rng,
                         init_fn=_sphere_init(trunk_spec, c.init_radius))
        self.color_head = MLP(
            store,
            f"{name}/color",
            MLPSpec(c.feature_width + enc_d, (c.color_width,), 3, out_activation="sigmoid"),
            rng,
        )
        store.register(f"{name}/beta_raw", np.full(1, _inverse_softplus(BETA_INIT), dtype=store.dtype))
        self._center = np.asarray(c.center, dtype=np.float64)

    def beta(self, store, tape=None, trainable=True):
        """Positive density sharpness via softplus reparameterization."""
        return eng.softplus(store.tensor(f"{self.name}/beta_raw", tape, trainable))

    def _fold(self, x, d):
        """Mirror-invariant input form: queries at (x, d) and at the sagittal
        reflection of (x, d) become identical arrays."""
        sign = np.where(x[:, :1] >= 0.0, 1.0, -1.0)
        xf = np.concatenate([np.abs(x[:, :1]), x[:, 1:]], axis=1)
        df = np.concatenate([sign * d[:, :1], d[:, 1:]], axis=1)
        return xf, df

    def _encode_pos(self, x, store):
        """Positional features; keeps the tape if x is a Tensor (warped
        samples carrying per-frame correction gradients)."""
        if isinstance(x, Tensor):
            if self.tie_mirror:
                x = eng.concat([eng.tabs(eng.slice_last(x, 0, 1)), eng.slice_last(x, 1, 3)], axis=-1)
            local = eng.sub(x, as_tensor(self._center.astype(x.data.dtype)))
            return positional_encode(local, self.pos_spec)
        x = np.atleast_2d(np.asarray(x, dtype=store.dtype))
        if self.tie_mirror:
            x = np.concatenate([np.abs(x[:, :1]), x[:, 1:]], axis=1)
        local = (x - self._center.astype(store.dtype)).astype(store.dtype)
        return encode_array(local, self.pos_spec)

    def query(self, store, x, d, tape=None, trainable=True):
        """(color, signed distance) at canonical points x along directions d.

        The distance comes off the trunk alone, so it cannot depend on the
        direction input by construction. x may be a Tensor; d is always
        treated as constant.
        """
        xd = x.data if isinstance(x, Tensor) else np.atleast_2d(np.asarray(x, dtype=store.dtype))
        d = np.atleast_2d(np.asarray(d, dtype=store.dtype))
        if self.tie_mirror:
            sign = np.where(xd[:, :1] >= 0.0, 1.0, -1.0)
            d = np.concatenate([sign * d[:, :1], d[:, 1:]], axis=1)
        out = self.trunk.forward(store, self._encode_pos(x, store), tape, trainable)
        s = eng.reshape(eng.slice_last(out, 0, 1), (len(xd),))
        feat = eng.slice_last(out, 1, 1 + self.config.feature_width)
        rgb = self.color_head.forward(
            store, eng.concat([feat, as_tensor(encode_array(d, self.dir_spec))], axis=-1),
            tape, trainable,
        )
        return rgb, s

    def sdf(self, store, x, tape=None, trainable=True):
        """Signed distance alone; skips the color head entirely."""
        n = len(x.data) if isinstance(x, Tensor) else len(np.atleast_2d(x))
        out = self.trunk.forward(store, self._encode_pos(x, store), tape, trainable)
        return eng.reshape(eng.slice_last(out, 0, 1), (n,))

    def sdf_array(self, store, x):
        """Plain-array signed distance for grid extraction and tools."""
        return self.sdf(store, x).data

    def spatial_gradient(self, store, x, eps=1e-3, tape=None, trainable=True):
        """Central-difference spatial gradient of the signed distance.

        Six extra trunk evaluations instead of differentiating through the
        tape twice; the result is differentiable w.r.t. parameters (each
        probe is an ordinary forward pass) but treats x as constant.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cols = []
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = eps
            sp = self.sdf(store, x + e, tape, trainable)
            sm = self.sdf(store, x - e, tape, trainable)
            cols.append(eng.mul(eng.sub(sp, sm), as_tensor(np.asarray(0.5 / eps, dtype=sp.data.dtype))))
        return eng.concat([eng.reshape(c, (len(x), 1)) for c in cols], axis=-1)


def query_human(field, store, x, d, tape=None, trainable=True):
    return field.query(store, x, d, tape, trainable)


# ---------------------------------------------------------------------------
# SDF-to-density


def sdf_to_density(s, beta, form="laplace_cdf"):
    """Density from signed distance: high inside, ~0 outside, sharpness 1/beta.

    ``laplace_cdf`` (default) is sigma = (1/beta) * Psi_beta(-s) with
    Psi_beta the zero-mean Laplace CDF: value 1/(2 beta) exactly at the
    surface, monotone decreasing in s. ``printed`` is the clamped ramp
    (1/(2 beta)) * max(0, 1 - e^{s/beta}), which rises to only 1/(2 beta)
    inside and is identically zero outside; it is kept for comparison.

    Exponent inputs are clamped to +-40 so saturated regions keep finite
    values and zero gradients instead of overflowing.
    """
    s = as_tensor(s)
    beta = as_tensor(beta)
    if np.any(beta.data <= 0.0):
        raise ValueError("beta must be positive")
    dt = s.data.dtype
    one = as_tensor(np.asarray(1.0, dtype=dt))
    half = as_tensor(np.asarray(0.5, dtype=dt))
    inv_b = eng.div(one, beta)
    q = eng.mul(s, inv_b)
    if form == "laplace_cdf":
        qc = eng.clip_max(eng.clip_min(q, -40.0), 40.0)
        outside = eng.mul(half, eng.exp(eng.neg(qc)))  # Psi(-s) for s >= 0
        inside = eng.sub(one, eng.mul(half, eng.exp(qc)))  # and for s < 0
        psi = eng.where_mask(s.data >= 0.0, outside, inside)
        return eng.mul(inv_b, psi)
    if form == "printed":
        qc = eng.clip_max(q, 1.0)  # anything past 0 clamps to zero density anyway
        ramp = eng.relu(eng.sub(one, eng.exp(qc)))
        return eng.mul(eng.mul(half, inv_b), ramp)
    raise ValueError(f"unknown density form {form!r}")


# ---------------------------------------------------------------------------
# per-frame correction field


@dataclass(frozen=True)
class DeltaConfig:
    pos_bands: int = 6
    hidden: tuple = (64, 64)
    embed_dim: int = 16
    delta_max: float = 0.05


class DeltaField:
    """Small additive canonical-space offset conditioned on the frame index.

    Offsets are tanh-bounded per component at delta_max/sqrt(3) so the
    Euclidean norm never exceeds delta_max. Frames outside the trained range
    (novel poses at render time) receive exactly zero offset.
    """

    def __init__(self, store, rng, n_frames, config=None, name="delta"):
        self.config = config or DeltaConfig()
        self.name = name
        self.n_frames = n_frames
        c = self.config
        self.pos_spec = EncodingSpec(c.pos_bands)
        self.embed = Embedding(store, f"{name}/frame", n_frames, c.embed_dim, rng)

        def init(layer, fan_in, fan_out, r, dt):
            if layer == len(c.hidden):  # start the correction at exactly zero
                return np.zeros((fan_in, fan_out), dtype=dt), np.zeros(fan_out, dtype=dt)
            return he_init(r, fan_in, fan_out, dt)

        self.mlp = MLP(
            store,
            f"{name}/mlp",
            MLPSpec(self.pos_spec.out_dim(3) + c.embed_dim, c.hidden, 3, out_activation="tanh"),
            rng,
            init_fn=init,
        )

    def query(self, store, x, frame_idx, tape=None, trainable=True):
        """Offsets (n, 3) for frame-space points x under frame indices."""
        x = np.atleast_2d(np.asarray(x, dtype=store.dtype))
        frame_idx = np.broadcast_to(np.asarray(frame_idx, dtype=np.int64), (len(x),))
        known = (frame_idx >= 0) & (frame_idx < self.n_frames)
        safe_idx = np.where(known, frame_idx, 0)
        emb = self.embed.lookup(store, safe_idx, tape, trainable)
        enc = as_tensor(encode_array(x, self.pos_spec))
        raw = self.mlp.forward(store, eng.concat([enc, emb], axis=-1), tape, trainable)
        scale = self.config.delta_max / np.sqrt(3.0)
        out = eng.mul(raw, as_tensor(np.asarray(scale, dtype=store.dtype)))
        zeros = as_tensor(np.zeros_like(out.data))
        return eng.where_mask(known[:, None], out, zeros)


def apply_delta(field, store, x, frame_idx, tape=None, trainable=True):
    return field.query(store, x, frame_idx, tape, trainable)
