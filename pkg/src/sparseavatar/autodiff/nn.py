"""Neural building blocks on top of the tape: encodings, MLPs, small convs.

Everything here is shape-static: a module registers its parameters into a
ParamStore segment once, then ``forward`` binds views of that segment to the
caller's tape. The same forward code serves training (tape attached) and
inference (tape=None) and produces bit-identical values either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as eng
from .engine import Tensor, as_tensor


@dataclass(frozen=True)
class EncodingSpec:
    """Sinusoidal feature expansion: sin/cos of the input at 2^k scales."""

    bands: int
    include_identity: bool = True

    def __post_init__(self):
        if self.bands < 0:
            raise ValueError("bands must be >= 0")

    def out_dim(self, in_dim):
        return in_dim * (2 * self.bands + (1 if self.include_identity else 0))


def positional_encode(x, spec):
    """Expand (N, D) inputs to (N, D * (2L + identity)) sinusoid features.

    Layout: [identity | sin block | cos block]; within each block the first
    component's L bands come first, then the next component's, matching
    ``encode_array``. Works on Tensors (differentiable) and plain arrays.
    """
    if isinstance(x, Tensor):
        if spec.bands == 0:
            return x if spec.include_identity else eng.slice_last(x, 0, 0)
        n, d = x.data.shape
        freqs = (2.0 ** np.arange(spec.bands)).astype(x.data.dtype)
        scaled = eng.mul(eng.reshape(x, (n, d, 1)), as_tensor(freqs))
        scaled = eng.reshape(scaled, (n, d * spec.bands))
        parts = []
        if spec.include_identity:
            parts.append(x)
        parts.append(eng.sin(scaled))
        parts.append(eng.cos(scaled))
        return eng.concat(parts, axis=-1)
    return encode_array(np.asarray(x), spec)


def encode_array(x, spec):
    """Plain-numpy twin of positional_encode for constant inputs."""
    x = np.atleast_2d(x)
    n, d = x.shape
    if spec.bands == 0:
        return x.copy() if spec.include_identity else np.zeros((n, 0), dtype=x.dtype)
    freqs = (2.0 ** np.arange(spec.bands)).astype(x.dtype)
    scaled = (x[:, :, None] * freqs).reshape(n, d * spec.bands)
    parts = []
    if spec.include_identity:
        parts.append(x)
    parts.append(np.sin(scaled))
    parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class MLPSpec:
    """Architecture of one fully connected stack.

    ``skips`` lists hidden-layer indices whose input is concatenated with the
    network input (the classic mid-network skip). ``activation`` applies to
    hidden layers; the output layer is linear unless ``out_activation`` says
    otherwise.
    """

    input_dim: int
    hidden: tuple
    output_dim: int
    activation: str = "relu"
    act_param: float = 1.0
    out_activation: str | None = None
    skips: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("all layer widths must be >= 1")
        n_layers = len(self.hidden) + 1
        if any(s <= 0 or s >= n_layers for s in self.skips):
            raise ValueError(f"skip indices must lie in (0, {n_layers})")


def _apply_activation(h, kind, param=1.0):
    if kind is None or kind == "linear":
        return h
    if kind == "relu":
        return eng.relu(h)
    if kind == "softplus":
        return eng.softplus(h, beta=param)
    if kind == "tanh":
        return eng.tanh(h)
    if kind == "sigmoid":
        return eng.sigmoid(h)
    raise ValueError(f"unknown activation {kind!r}")


def he_init(rng, fan_in, fan_out, dtype):
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    return w.astype(dtype), np.zeros(fan_out, dtype=dtype)


class MLP:
    """Fully connected stack with optional input skips, stored flat.

    ``init_fn(layer, fan_in, fan_out, rng, dtype) -> (W, b)`` customises the
    initialisation (the human distance field uses a sphere-like init).
    """

    def __init__(self, store, name, spec, rng, init_fn=None):
        self.name = name
        self.spec = spec
        self.layer_dims = []
        dims_in = []
        prev = spec.input_dim
        widths = list(spec.hidden) + [spec.output_dim]
        for i, width in enumerate(widths):
            d_in = prev + (spec.input_dim if i in spec.skips else 0)
            dims_in.append(d_in)
            self.layer_dims.append((d_in, width))
            prev = width
        init = init_fn or (lambda layer, fi, fo, r, dt: he_init(r, fi, fo, dt))
        for i, (d_in, d_out) in enumerate(self.layer_dims):
            w, b = init(i, d_in, d_out, rng, store.dtype)
            store.register(f"{name}/W{i}", w)
            store.register(f"{name}/b{i}", b)

    def params(self, store, tape=None, trainable=True):
        out = []
        for i in range(len(self.layer_dims)):
            out.append(
                (
                    store.tensor(f"{self.name}/W{i}", tape, trainable),
                    store.tensor(f"{self.name}/b{i}", tape, trainable),
                )
            )
        return out

    def forward(self, store, x, tape=None, trainable=True):
        """Map (N, input_dim) to (N, output_dim)."""
        x = as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.spec.input_dim:
            raise ValueError(
                f"{self.name}: expected (N, {self.spec.input_dim}) input, got {x.data.shape}"
            )
        params = self.params(store, tape, trainable)
        h = x
        last = len(params) - 1
        for i, (w, b) in enumerate(params):
            if i in self.spec.skips:
                h = eng.concat([h, x], axis=-1)
            h = eng.add(eng.matmul(h, w), b)
            if i < last:
                h = _apply_activation(h, self.spec.activation, self.spec.act_param)
            else:
                h = _apply_activation(h, self.spec.out_activation)
        return h


class Embedding:
    """Learned per-index vectors (used for the per-frame correction code)."""

    def __init__(self, store, name, count, dim, rng, scale=1e-2):
        self.name = name
        self.count = count
        self.dim = dim
        store.register(name, rng.normal(0.0, scale, size=(count, dim)).astype(store.dtype))

    def lookup(self, store, idx, tape=None, trainable=True):
        table = store.tensor(self.name, tape, trainable)
        return eng.gather_rows(table, np.asarray(idx, dtype=np.intp))


# ---------------------------------------------------------------------------
# small convolution helpers for the digitization encoders


def conv_out_size(size, k, stride):
    return (size - k) // stride + 1


def _unfold_indices(h, w, k, stride):
    """Row indices into a flattened (h*w) image for valid k x k patches."""
    oh, ow = conv_out_size(h, k, stride), conv_out_size(w, k, stride)
    ys = (np.arange(oh) * stride)[:, None, None, None]
    xs = (np.arange(ow) * stride)[None, :, None, None]
    ky = np.arange(k)[None, None, :, None]
    kx = np.arange(k)[None, None, None, :]
    rows = (ys + ky) * w + (xs + kx)
    return rows.reshape(oh * ow * k * k), oh, ow


_UNFOLD_CACHE = {}


def conv2d(x, h, w, weight, bias, k, stride):
    """Valid-mode strided conv on a flat (h*w, C_in) tensor.

    weight is (k*k*C_in, C_out). Returns (flat (oh*ow, C_out) tensor, oh, ow).
    Patches are gathered through the tape so stacked conv layers backprop.
    """
    key = (h, w, k, stride)
    if key not in _UNFOLD_CACHE:
        _UNFOLD_CACHE[key] = _unfold_indices(h, w, k, stride)
    rows, oh, ow = _UNFOLD_CACHE[key]
    c_in = x.data.shape[1]
    patches = eng.gather_rows(x, rows)  # (oh*ow*k*k, C_in)
    patches = eng.reshape(patches, (oh * ow, k * k * c_in))
    out = eng.add(eng.matmul(patches, weight), bias)
    return out, oh, ow


def bilinear_sample(feat, h, w, u, v):
    """Sample a flat (h*w, C) feature map at continuous pixel coords.

    (u, v) follow image convention: u along width, v along height, both in
    pixel units with (0, 0) the center of the top-left texel. Coordinates are
    clamped to the map. Returns (N, C).
    """
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0).astype(feat.data.dtype)
    fv = (v - v0).astype(feat.data.dtype)

    def corner(vi, ui, wgt):
        rows = eng.gather_rows(feat, vi * w + ui)
        return eng.mul(rows, as_tensor(wgt[:, None]))

    out = corner(v0, u0, (1 - fu) * (1 - fv))
    out = eng.add(out, corner(v0, u1, fu * (1 - fv)))
    out = eng.add(out, corner(v1, u0, (1 - fu) * fv))
    out = eng.add(out, corner(v1, u1, fu * fv))
    return out
