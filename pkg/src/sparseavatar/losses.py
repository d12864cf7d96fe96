"""Training objectives: color/depth/mask/symmetry/SDF losses and HSV tools.

Every loss returns a scalar Tensor (batch mean) so terms can be weighted and
summed on the tape. The sagittal symmetry losses compare the human field at
canonical points against their mirror images: hue/saturation distance for
color (value/illumination deliberately unconstrained) and a tanh-squashed
density distance for geometry. Direct SDF supervision regresses the field to
the signed proxy-body distance under an exponentially decaying weight.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import engine as eng
from .autodiff.engine import as_tensor
from .fields import sdf_to_density
from .geometry.distance import signed_distance
from .geometry.symmetry import mirror

__all__ = [
    "LossWeights",
    "LossBundle",
    "CsvLossLog",
    "rgb_to_hs",
    "loss_background",
    "loss_human",
    "loss_depth",
    "loss_mask",
    "loss_symmetry",
    "loss_sdf",
    "loss_sdf_values",
    "sdf_weight",
]


# ---------------------------------------------------------------------------
# weights and bookkeeping


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights; the SDF weight additionally decays by half-lives."""

    lambda_human: float = 1.0
    lambda_mask: float = 0.1
    lambda_s_c: float = 0.05
    lambda_s_alpha: float = 0.05
    lambda_sdf0: float = 1.0
    sdf_half_life: int = 500  # steps until lambda_sdf halves
    lambda_s_hdn: float = 0.5
    lambda_c_hdn: float = 0.5
    lambda_fts: float = 1.0
    lambda_ftc: float = 1.0
    alpha_depth: float = 0.95
    lambda_bkgr: float = 1.0
    lambda_depth: float = 0.1

    def __post_init__(self):
        for name in (
            "lambda_human",
            "lambda_mask",
            "lambda_s_c",
            "lambda_s_alpha",
            "lambda_sdf0",
            "lambda_s_hdn",
            "lambda_c_hdn",
            "lambda_fts",
            "lambda_ftc",
            "lambda_bkgr",
            "lambda_depth",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not (0.0 < self.alpha_depth < 1.0):
            raise ValueError("alpha_depth must lie in (0, 1)")
        if self.sdf_half_life < 1:
            raise ValueError("sdf_half_life must be at least one step")

    def sdf_weight(self, step):
        return sdf_weight(step, self.lambda_sdf0, self.sdf_half_life)


def sdf_weight(step, lambda0, half_life):
    """Exponential decay: lambda0 at step 0, halved every half_life steps."""
    return float(lambda0) * 2.0 ** (-float(step) / float(half_life))


@dataclass
class LossBundle:
    """One step's named loss values (unweighted), weights, and their total."""

    terms: dict
    weights: dict
    total: float = None

    def __post_init__(self):
        computed = sum(self.weights.get(k, 1.0) * v for k, v in self.terms.items())
        if self.total is None:
            self.total = computed
        elif abs(self.total - computed) > 1e-9:
            raise ValueError(
                f"stated total {self.total} != weighted sum {computed}"
            )


class CsvLossLog:
    """Appends one CSV row per step: step, each term, weighted total."""

    def __init__(self, path, term_names):
        self.path = path
        self.term_names = list(term_names)
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(["step", *self.term_names, "total"])

    def append(self, step, bundle):
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(
                [step]
                + [repr(float(bundle.terms.get(n, 0.0))) for n in self.term_names]
                + [repr(float(bundle.total))]
            )


# ---------------------------------------------------------------------------
# color space


def rgb_to_hs(c, embedding=True):
    """RGB to hue/saturation, dropping value so illumination stays free.

    With ``embedding=True`` (default) returns (n, 3) rows
    (cos 2*pi*H, sin 2*pi*H, S): hue lives on the unit circle, so distances
    are continuous across the 0/1 hue wrap. ``embedding=False`` returns the
    raw (H, S) pair (n, 2), kept for comparison; its hue coordinate is
    discontinuous at the wrap. Achromatic inputs map to hue (1, 0), S = 0.
    """
    c = as_tensor(c)
    if c.data.ndim != 2 or c.data.shape[1] != 3:
        raise ValueError("expected (n, 3) rgb input")
    r = eng.slice_last(c, 0, 1)
    g = eng.slice_last(c, 1, 2)
    b = eng.slice_last(c, 2, 3)
    cmax = eng.maximum(eng.maximum(r, g), b)
    cmin = eng.minimum(eng.minimum(r, g), b)
    delta = eng.sub(cmax, cmin)

    dt = c.data.dtype
    ones = as_tensor(np.ones_like(delta.data))
    zeros = as_tensor(np.zeros_like(delta.data))
    chromatic = delta.data > 0
    safe_delta = eng.where_mask(chromatic, delta, ones)

    rd, gd, bd = (x.data for x in (r, g, b))
    is_r = (rd >= gd) & (rd >= bd)
    is_g = ~is_r & (gd >= bd)
    two = as_tensor(np.asarray(2.0, dtype=dt))
    four = as_tensor(np.asarray(4.0, dtype=dt))
    # sixths of the hue circle; negative/overflowing values are fine because
    # they only ever enter through the periodic embedding
    h6 = eng.where_mask(
        is_r,
        eng.div(eng.sub(g, b), safe_delta),
        eng.where_mask(
            is_g,
            eng.add(eng.div(eng.sub(b, r), safe_delta), two),
            eng.add(eng.div(eng.sub(r, g), safe_delta), four),
        ),
    )
    positive = cmax.data > 0
    sat = eng.where_mask(
        chromatic & positive,
        eng.div(delta, eng.where_mask(positive, cmax, ones)),
        zeros,
    )
    if embedding:
        angle = eng.mul(h6, as_tensor(np.asarray(np.pi / 3.0, dtype=dt)))
        cos_h = eng.where_mask(chromatic, eng.cos(angle), ones)
        sin_h = eng.where_mask(chromatic, eng.sin(angle), zeros)
        return eng.concat([cos_h, sin_h, sat], axis=-1)
    wraps = np.floor(h6.data / 6.0)
    hue = eng.mul(eng.sub(h6, as_tensor(wraps * 6.0)), as_tensor(np.asarray(1 / 6.0, dtype=dt)))
    hue = eng.where_mask(chromatic, hue, zeros)
    return eng.concat([hue, sat], axis=-1)


# ---------------------------------------------------------------------------
# photometric and geometric losses


def _squared_error_mean(predicted, target, what):
    predicted = as_tensor(predicted)
    n = predicted.data.shape[0]
    if n == 0:
        warnings.warn(f"{what}: empty ray batch, loss is 0", stacklevel=3)
        return as_tensor(np.zeros((), dtype=np.float64))
    target = np.asarray(target, dtype=predicted.data.dtype)
    diff = eng.sub(predicted, as_tensor(target))
    return eng.tmean(eng.tsum(eng.square(diff), axis=1))


def loss_background(rendered, gt):
    """Mean squared color error over rays classified as background."""
    return _squared_error_mean(rendered, gt, "loss_background")


def loss_human(rendered, gt):
    """Mean squared color error over rays classified as human."""
    return _squared_error_mean(rendered, gt, "loss_human")


def loss_depth(sigma, t, target_depth, alpha):
    """Mean (over rays with valid depth) of the density mass accumulated in
    front of alpha * target_depth; pushes free space before the surface to
    zero density. Rays without a finite positive target are skipped.
    """
    sigma = as_tensor(sigma)
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    target = np.asarray(target_depth, dtype=np.float64)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    valid = np.isfinite(target) & (target > 0)
    if not valid.any():
        warnings.warn("loss_depth: no rays with usable depth", stacklevel=2)
        return as_tensor(np.zeros((), dtype=np.float64))
    inside = t < (alpha * np.where(valid, target, 0.0))[:, None]
    masked = eng.where_mask(inside, sigma, as_tensor(np.zeros_like(sigma.data)))
    per_ray = eng.tsum(masked, axis=1)
    count = as_tensor(np.asarray(float(valid.sum()), dtype=sigma.data.dtype))
    return eng.div(eng.tsum(per_ray), count)


def loss_mask(opacity_human, opacity_other):
    """Mean squared opacity off human rays minus mean squared opacity on
    them; perfect separation scores -1, total confusion +1."""
    parts = []
    opacity_human = as_tensor(opacity_human)
    opacity_other = as_tensor(opacity_other)
    if opacity_other.data.size:
        parts.append(eng.tmean(eng.square(opacity_other)))
    if opacity_human.data.size:
        parts.append(eng.neg(eng.tmean(eng.square(opacity_human))))
    if not parts:
        return as_tensor(np.zeros((), dtype=np.float64))
    out = parts[0]
    for p in parts[1:]:
        out = eng.add(out, p)
    return out


def loss_symmetry(
    field,
    store,
    x,
    d,
    *,
    maps=None,
    beta=None,
    density_form="laplace_cdf",
    tape=None,
    trainable=True,
):
    """Sagittal symmetry penalties (color in HS space, tanh-density).

    Queries the human field at canonical points/directions and at their
    mirror images. Points exactly on the mirror plane are their own image;
    their color pair differs only by viewing direction — view dependence,
    not asymmetry — so those rows are excluded by construction.

    Returns (color term, density term), each a scalar mean.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    x_m, d_m = mirror(x, d, maps)
    rgb_a, s_a = field.query(store, x, d, tape, trainable)
    rgb_b, s_b = field.query(store, x_m, d_m, tape, trainable)
    if beta is None:
        beta = field.beta(store, tape, trainable)
    sig_a = eng.tanh(sdf_to_density(s_a, beta, density_form))
    sig_b = eng.tanh(sdf_to_density(s_b, beta, density_form))

    off_plane = x[:, 0] != 0.0
    hs_diff = eng.tsum(eng.square(eng.sub(rgb_to_hs(rgb_a), rgb_to_hs(rgb_b))), axis=1)
    zeros = as_tensor(np.zeros_like(hs_diff.data))
    l_color = eng.tmean(eng.where_mask(off_plane, hs_diff, zeros))
    l_alpha = eng.tmean(eng.square(eng.sub(sig_a, sig_b)))
    return l_color, l_alpha


def loss_sdf_values(s, dbar, lam):
    """lam * mean((dbar - s)^2) for precomputed signed target distances."""
    s = as_tensor(s)
    dbar = np.asarray(dbar, dtype=s.data.dtype)
    err = eng.square(eng.sub(as_tensor(dbar), s))
    return eng.mul(eng.tmean(err), as_tensor(np.asarray(lam, dtype=s.data.dtype)))


def loss_sdf(field, store, x, mesh, lam, *, tape=None, trainable=True):
    """Regress the field's SDF to the signed distance of the proxy body mesh
    at canonical points x, scaled by the (schedule-decayed) weight lam."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dbar = signed_distance(x, mesh)
    s = field.sdf(store, x, tape, trainable)
    return loss_sdf_values(s, dbar, lam)
