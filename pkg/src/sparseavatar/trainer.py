"""Training loop, evaluation, mesh export, and the ablation harness.

One optimization step renders a small batch of rays from a single capture
frame (half drawn from body pixels, half from free space), assembles the
enabled loss terms on one autodiff tape, and applies a masked Adam update to
the scene parameters. The digitization branch, when enabled, alternates with
the scene update on a fixed cadence: digitized-surface points supervise the
human field, then one finetune step trains the digitizer against the frozen
field.

Loss terms are toggled by name through ``TrainConfig.enabled``; the shipped
``VARIANTS`` table maps ablation row names to term sets so every ablation is
the same loop with a different switch setting. Logs are append-only CSV with
a fixed column set across variants (disabled terms log zero), which keeps
runs diffable; determinism is exact for a fixed config, dataset, and seed.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import engine as eng
from .autodiff.engine import Tape, as_tensor
from .autodiff.store import Adam, ParamStore, load_checkpoint, save_checkpoint
from .digitization import (
    AnalyticMode,
    DigitizationNet,
    LearnedMode,
    digitize,
    fibonacci_directions,
    finetune_step,
    hdn_color_loss,
    hdn_geometry_loss,
    sample_digitized_points,
    sample_novel_pose,
)
from .fields import (
    BackgroundConfig,
    BackgroundField,
    DeltaConfig,
    DeltaField,
    HumanConfig,
    HumanField,
)
from .geometry import (
    MeshDistanceIndex,
    PosedBody,
    TriangleMesh,
    marching_cubes_grid,
    sample_surface_points,
)
from .geometry.body import ArticulatedBody
from .geometry.symmetry import mirror
from .imgio import save_png
from .losses import (
    CsvLossLog,
    LossBundle,
    LossWeights,
    loss_background,
    loss_depth,
    loss_human,
    loss_mask,
    loss_sdf_values,
    loss_symmetry,
    rgb_to_hs,
)
from .metrics import psnr, ssim
from .rendering import FieldSet, RenderConfig, generate_rays, render_image, render_rays
from .synthscene import load_dataset

# Fixed CSV column set; disabled terms log 0.0 so logs diff across variants.
TERM_NAMES = [
    "background",
    "depth",
    "human",
    "mask",
    "symmetry_color",
    "symmetry_alpha",
    "sdf",
    "eikonal",
    "hdn_geometry",
    "hdn_color",
    "finetune_occupancy",
    "finetune_color",
]

# Always-on photometric/geometric supervision; the switchable regularizers
# ("symmetry", "sdf", "eikonal", "hdn") stack on top of these.
BASE_TERMS = frozenset({"background", "depth", "human", "mask"})
ALLOWED_TERMS = BASE_TERMS | {"symmetry", "sdf", "eikonal", "hdn"}
DEFAULT_TERMS = BASE_TERMS | {"symmetry", "sdf", "hdn"}

# Ablation rows, in report order: each entry is the base supervision plus the
# named additions; "eikonal" swaps the mesh-distance penalty for a
# unit-gradient penalty, and "no-SDF" is the full model minus that penalty.
VARIANTS = {
    "base": BASE_TERMS,
    "+symm": BASE_TERMS | {"symmetry"},
    "+HDN": BASE_TERMS | {"hdn"},
    "+symm+SDF": BASE_TERMS | {"symmetry", "sdf"},
    "no-SDF": BASE_TERMS | {"symmetry", "hdn"},
    "eikonal": BASE_TERMS | {"symmetry", "hdn", "eikonal"},
    "full": BASE_TERMS | {"symmetry", "sdf", "hdn"},
}
VARIANT_ORDER = list(VARIANTS)
VARIANT_SLUGS = {
    "base": "base",
    "+symm": "symm",
    "+HDN": "hdn",
    "+symm+SDF": "symm-sdf",
    "no-SDF": "no-sdf",
    "eikonal": "eikonal",
    "full": "full",
}

LPIPS_NOTE = "n/a (perceptual metric needs pretrained network weights)"


class NanLossError(RuntimeError):
    """Raised when the training loss turns non-finite.

    Parameters are rolled back to the last finite snapshot before raising, so
    the in-memory store stays usable; the on-disk checkpoint from the last
    cadence is untouched and can be resumed via :func:`load_run`.
    """

    def __init__(self, step, checkpoint_path=None):
        self.step = step
        self.checkpoint_path = checkpoint_path
        where = f"; resume from {checkpoint_path}" if checkpoint_path else ""
        super().__init__(
            f"non-finite loss at step {step}; parameters restored to the "
            f"last finite snapshot{where}"
        )


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a run; two runs with equal configs and
    datasets produce bit-identical logs, parameters, and renders."""

    steps: int = 5000
    batch: int = 128
    lr: float = 5e-4
    seed: int = 0
    dtype: str = "float32"
    dataset_path: str = ""
    enabled: frozenset = DEFAULT_TERMS
    weights: LossWeights = field(default_factory=LossWeights)
    render: RenderConfig = field(
        default_factory=lambda: RenderConfig(
            n_coarse=16, n_fine=16, n_human=12, use_delta=False
        )
    )
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    human: HumanConfig = field(default_factory=HumanConfig)
    delta: DeltaConfig = field(default_factory=DeltaConfig)
    tie_mirror: bool = False
    n_sdf: int = 512
    sdf_surface_fraction: float = 0.5
    sdf_noise: float = 0.05
    sdf_pad: float = 0.3
    n_symmetry: int = 512
    n_eikonal: int = 512
    hdn_mode: str = "analytic"
    hdn_every: int = 10
    hdn_points: int = 2000
    hdn_dirs: int = 8
    hdn_resolution: int = 32
    hdn_lr: float = 1e-3
    hdn_zeta: float = 0.02
    hdn_finetune_points: int = 1000
    hdn_finetune_render: bool = False
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        unknown = frozenset(self.enabled) - ALLOWED_TERMS
        if unknown:
            raise ValueError(
                f"unknown loss terms {sorted(unknown)}; allowed: {sorted(ALLOWED_TERMS)}"
            )
        if "sdf" in self.enabled and "eikonal" in self.enabled:
            raise ValueError(
                "'eikonal' replaces the mesh-distance penalty; enable one of "
                "'sdf'/'eikonal', not both"
            )
        if self.hdn_mode not in ("analytic", "learned"):
            raise ValueError(f"hdn_mode must be analytic or learned, got {self.hdn_mode!r}")
        if self.hdn_every < 1 or self.checkpoint_every < 1:
            raise ValueError("hdn_every and checkpoint_every must be >= 1")
        if not 0.0 <= self.sdf_surface_fraction <= 1.0:
            raise ValueError("sdf_surface_fraction must lie in [0, 1]")
        # frozensets only; reject accidentally-mutable term sets early
        object.__setattr__(self, "enabled", frozenset(self.enabled))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def variant_config(config, name):
    """The same run configuration with the ablation row's term switches."""
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; known: {VARIANT_ORDER}")
    return replace(config, enabled=VARIANTS[name])


def config_to_dict(config):
    """JSON-ready dict; inverse of :func:`config_from_dict`."""
    d = asdict(config)
    d["enabled"] = sorted(config.enabled)
    return d


_NESTED_CONFIGS = {
    "weights": LossWeights,
    "render": RenderConfig,
    "background": BackgroundConfig,
    "human": HumanConfig,
    "delta": DeltaConfig,
}


def config_from_dict(d):
    """Rebuild a TrainConfig from :func:`config_to_dict` output (or a JSON
    config file); unknown keys raise, missing keys take defaults."""

    def build(cls, sub):
        known = cls.__dataclass_fields__
        bad = set(sub) - set(known)
        if bad:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(bad)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()})

    known = TrainConfig.__dataclass_fields__
    bad = set(d) - set(known)
    if bad:
        raise ValueError(f"unknown config keys: {sorted(bad)}")
    kwargs = {}
    for name, value in d.items():
        if name in _NESTED_CONFIGS:
            value = build(_NESTED_CONFIGS[name], value)
        elif name == "enabled":
            value = frozenset(value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return TrainConfig(**kwargs)


@dataclass(eq=False)
class Scene:
    """A parameter store plus the field objects registered in it."""

    store: ParamStore
    fields: FieldSet
    hdn: DigitizationNet = None
    adam: Adam = None
    hdn_adam: Adam = None


def build_scene(config, body, n_frames=1):
    """Register all fields for ``config`` in a fresh store and freeze it.

    The scene optimizer masks out digitizer parameters and vice versa, so the
    two updates touch disjoint segments. Initialization consumes a single
    seeded generator in fixed order, making layouts and initial values
    reproducible from the config alone.
    """
    store = ParamStore(dtype=config.np_dtype)
    rng = np.random.default_rng(config.seed)
    background = BackgroundField(store, rng, config.background)
    human = HumanField(store, rng, config.human, tie_mirror=config.tie_mirror)
    delta = None
    if config.render.use_delta:
        delta = DeltaField(store, rng, n_frames, config.delta)
    hdn = None
    if "hdn" in config.enabled and config.hdn_mode == "learned":
        hdn = DigitizationNet(store, rng)
    store.freeze()
    if hdn is not None:
        hdn_mask = store.mask_for(["hdn/"])
        adam = Adam(store, lr=config.lr, mask=~hdn_mask)
        hdn_adam = Adam(store, lr=config.hdn_lr, mask=hdn_mask)
    else:
        adam = Adam(store, lr=config.lr)
        hdn_adam = None
    fields = FieldSet(background=background, human=human, delta=delta, body=body)
    return Scene(store=store, fields=fields, hdn=hdn, adam=adam, hdn_adam=hdn_adam)


class _RunCaches:
    """Per-run precomputation: posed bodies, pixel pools, mesh distance
    index, canonical sampling box, and digitized humans (analytic mode)."""

    def __init__(self, config, dataset):
        body = dataset.body
        self.posed = {}
        self.body_px = {}
        self.free_px = {}
        for i in dataset.train_indices:
            fr = dataset.frames[i]
            self.posed[int(i)] = PosedBody(body, fr.pose)
            flat_mask = fr.mask.reshape(-1).astype(bool)
            self.body_px[int(i)] = np.flatnonzero(flat_mask)
            self.free_px[int(i)] = np.flatnonzero(~flat_mask)
        mesh = body.canonical_mesh
        self.mesh_index = MeshDistanceIndex(mesh)
        self.box_lo = mesh.vertices.min(axis=0) - config.sdf_pad
        self.box_hi = mesh.vertices.max(axis=0) + config.sdf_pad
        self.digitized = {}

    def digitized_for(self, config, dataset, scene, fi):
        """Digitized human for frame ``fi``; cached per frame in analytic
        mode, recomputed in learned mode (the digitizer trains)."""
        fr = dataset.frames[fi]
        if config.hdn_mode == "analytic":
            if fi not in self.digitized:
                mode = AnalyticMode(dataset.body, dataset.texture, pose=fr.pose)
                self.digitized[fi] = digitize(
                    fr.image, fr.camera, mode, resolution=config.hdn_resolution
                )
            return self.digitized[fi]
        mode = LearnedMode(scene.hdn, scene.store)
        verts = self.posed[fi].posed_mesh().vertices
        bounds = (verts.min(axis=0) - 0.2, verts.max(axis=0) + 0.2)
        try:
            return digitize(
                fr.image, fr.camera, mode, resolution=config.hdn_resolution, bounds=bounds
            )
        except ValueError:
            return None


@dataclass(eq=False)
class TrainResult:
    config: TrainConfig
    store: ParamStore
    fields: FieldSet
    adam: Adam
    hdn: DigitizationNet
    hdn_adam: Adam
    history: list  # one dict per step: step, every term, total
    final_step: int
    checkpoint_path: str = None
    log_path: str = None


def _rows(t, idx):
    """Tape-tracked row gather that also accepts 1-D tensors."""
    if t.data.ndim == 1:
        out = eng.gather_rows(eng.reshape(t, (t.data.shape[0], 1)), idx)
        return eng.reshape(out, (len(idx),))
    return eng.gather_rows(t, idx)


def _pixel_batch(config, caches, fi, rng):
    """Flat pixel indices for one step: half body, half free space; a pool
    that is empty (all-body or no-body frames) cedes its half to the other."""
    on_pool = caches.body_px[fi]
    off_pool = caches.free_px[fi]
    k_on = config.batch // 2
    k_off = config.batch - k_on
    if len(on_pool) == 0:
        k_off += k_on
        k_on = 0
    if len(off_pool) == 0:
        k_on += k_off
        k_off = 0
    if k_on + k_off == 0:
        raise ValueError("frame has no pixels")
    parts = []
    if k_on:
        parts.append(on_pool[rng.integers(len(on_pool), size=k_on)])
    if k_off:
        parts.append(off_pool[rng.integers(len(off_pool), size=k_off)])
    return np.concatenate(parts)


def _train_step(config, dataset, scene, caches, rng, step):
    """One optimization step; returns the step's LossBundle.

    Non-finite totals are detected before any parameter update, so the store
    still holds the previous (finite) iterate when the bundle reports NaN.
    """
    store, fields = scene.store, scene.fields
    w = config.weights
    enabled = config.enabled

    train_idx = dataset.train_indices
    fi = int(train_idx[rng.integers(len(train_idx))])
    fr = dataset.frames[fi]
    width = fr.image.shape[1]

    flat = _pixel_batch(config, caches, fi, rng)
    pixels = np.stack([flat % width, flat // width], axis=1)
    gt_rgb = fr.image.reshape(-1, 3)[flat]
    gt_depth = fr.depth.reshape(-1)[flat]
    on = fr.mask.reshape(-1)[flat].astype(bool)

    origins, dirs = generate_rays(fr.camera, pixels)
    tape = Tape()
    out = render_rays(
        store,
        fields,
        origins,
        dirs,
        dataset.t_near,
        dataset.t_far,
        pose=fr.pose,
        posed=caches.posed[fi],
        config=config.render,
        rng=rng,
        tape=tape,
    )

    hit = out.human_hit
    row_of = np.full(len(flat), -1)
    hidx = np.flatnonzero(hit)
    row_of[hidx] = np.arange(len(hidx))

    terms = {}  # name -> scalar Tensor
    weights = {}  # name -> float multiplier

    if "background" in enabled:
        off = np.flatnonzero(~on)
        if off.size:
            t = loss_background(_rows(out.rgb, off), gt_rgb[off])
            t = eng.add(t, loss_background(_rows(out.coarse_rgb, off), gt_rgb[off]))
            terms["background"] = t
            weights["background"] = w.lambda_bkgr

    if "depth" in enabled:
        terms["depth"] = loss_depth(out.fine_sigma, out.fine_t, gt_depth, w.alpha_depth)
        weights["depth"] = w.lambda_depth

    if "human" in enabled:
        on_hit = np.flatnonzero(on & hit)
        if on_hit.size:
            terms["human"] = loss_human(
                _rows(out.human_rgb, row_of[on_hit]), gt_rgb[on_hit]
            )
            weights["human"] = w.lambda_human

    if "mask" in enabled:
        # Both sides read the human branch's opacity; rays that never enter
        # the body box contribute an exact zero.
        sides = []
        for members in (on, ~on):
            rows = np.flatnonzero(members & hit)
            parts = []
            if rows.size:
                parts.append(_rows(out.human_acc, row_of[rows]))
            n_miss = int(np.count_nonzero(members & ~hit))
            if n_miss:
                parts.append(as_tensor(np.zeros(n_miss, dtype=store.dtype)))
            if not parts:
                sides.append(as_tensor(np.zeros(0, dtype=store.dtype)))
            elif len(parts) == 1:
                sides.append(parts[0])
            else:
                sides.append(eng.concat(parts, axis=0))
        terms["mask"] = loss_mask(sides[0], sides[1])
        weights["mask"] = w.lambda_mask

    if "symmetry" in enabled and out.human_canonical is not None:
        n = len(out.human_canonical)
        if n:
            sel = rng.choice(n, size=min(config.n_symmetry, n), replace=False)
            l_color, l_alpha = loss_symmetry(
                fields.human,
                store,
                out.human_canonical[sel],
                out.human_canonical_dirs[sel],
                density_form=config.render.density_form,
                tape=tape,
            )
            terms["symmetry_color"] = l_color
            weights["symmetry_color"] = w.lambda_s_c
            terms["symmetry_alpha"] = l_alpha
            weights["symmetry_alpha"] = w.lambda_s_alpha

    if "sdf" in enabled and config.n_sdf:
        k_s = int(round(config.n_sdf * config.sdf_surface_fraction))
        k_u = config.n_sdf - k_s
        parts = []
        if k_s:
            seed = int(rng.integers(2**31))
            surf = sample_surface_points(dataset.body.canonical_mesh, k_s, rng_seed=seed)
            parts.append(surf + rng.normal(0.0, config.sdf_noise, (k_s, 3)))
        if k_u:
            parts.append(rng.uniform(caches.box_lo, caches.box_hi, (k_u, 3)))
        x = np.concatenate(parts)
        dbar, _ = caches.mesh_index.signed(x)
        s = fields.human.sdf(store, x, tape=tape)
        terms["sdf"] = loss_sdf_values(s, dbar, 1.0)
        weights["sdf"] = w.sdf_weight(step)

    if "eikonal" in enabled and config.n_eikonal:
        x = rng.uniform(caches.box_lo, caches.box_hi, (config.n_eikonal, 3))
        g = fields.human.spatial_gradient(store, x, tape=tape)
        sq = eng.add(eng.tsum(eng.square(g), axis=1), as_tensor(np.asarray(1e-12)))
        norm = eng.sqrt(sq)
        dev = eng.sub(norm, as_tensor(np.asarray(1.0, dtype=norm.data.dtype)))
        terms["eikonal"] = eng.tmean(eng.square(dev))
        weights["eikonal"] = w.sdf_weight(step)

    hdn_due = "hdn" in enabled and step % config.hdn_every == 0
    if hdn_due:
        dig = caches.digitized_for(config, dataset, scene, fi)
        if dig is None or len(dig.mesh.faces) == 0:
            warnings.warn(
                f"digitized mesh empty for frame {fi}; skipping digitized "
                "supervision this step",
                stacklevel=2,
            )
        else:
            world, canonical = sample_digitized_points(
                dig, caches.posed[fi], config.hdn_points,
                rng_seed=int(rng.integers(2**31)),
            )
            terms["hdn_geometry"] = hdn_geometry_loss(
                fields.human, store, canonical, tape=tape
            )
            weights["hdn_geometry"] = w.lambda_s_hdn
            terms["hdn_color"] = hdn_color_loss(
                fields.human,
                store,
                canonical,
                fibonacci_directions(config.hdn_dirs),
                dig,
                x_world=world,
                tape=tape,
            )
            weights["hdn_color"] = w.lambda_c_hdn

    term_floats = {name: float(t.data) for name, t in terms.items()}
    total = sum(weights.get(k, 1.0) * v for k, v in term_floats.items())

    if terms and np.isfinite(total):
        total_t = None
        for name, t in terms.items():
            wt = eng.mul(t, as_tensor(np.asarray(weights[name], dtype=store.dtype)))
            total_t = wt if total_t is None else eng.add(total_t, wt)
        if total_t.tape is tape:
            store.zero_grad()
            eng.backward(tape, total_t)
            scene.adam.step()

    if hdn_due and config.hdn_mode == "learned" and np.isfinite(total):
        stats = finetune_step(
            fields.human,
            store,
            scene.hdn,
            scene.hdn_adam,
            dataset.body,
            fr.camera,
            lambda r: sample_novel_pose(dataset.body, r),
            rng,
            fields=fields if config.hdn_finetune_render else None,
            zeta=config.hdn_zeta,
            n_points=config.hdn_finetune_points,
            lambda_fts=w.lambda_fts,
            lambda_ftc=w.lambda_ftc,
            image=None if config.hdn_finetune_render else fr.image,
        )
        if not stats["skipped"]:
            term_floats["finetune_occupancy"] = float(stats["l_fts"])
            term_floats["finetune_color"] = float(stats["l_ftc"])
            weights["finetune_occupancy"] = 0.0
            weights["finetune_color"] = 0.0

    return LossBundle(terms=term_floats, weights=weights)


def train(config, dataset=None, out_dir=None, *, progress_every=0):
    """Run the full optimization and return a :class:`TrainResult`.

    ``dataset`` may be an in-memory capture or omitted to load
    ``config.dataset_path``. With ``out_dir`` set, writes ``checkpoint.npz``
    (at step 0, every ``checkpoint_every`` steps, and at the end) and
    ``loss_log.csv`` (one row per step, fixed columns). A non-finite loss
    rolls parameters back to the last finite snapshot and raises
    :class:`NanLossError` with the retained on-disk checkpoint named.
    """
    if dataset is None:
        if not config.dataset_path:
            raise ValueError("pass a dataset or set dataset_path in the config")
        dataset = load_dataset(config.dataset_path)
    if not len(dataset.train_indices):
        raise ValueError("dataset has no training frames")

    scene = build_scene(config, dataset.body, n_frames=len(dataset.frames))
    caches = _RunCaches(config, dataset)
    rng = np.random.default_rng(config.seed + 1)

    checkpoint_path = log_path = None
    log = None
    meta_base = {"config": config_to_dict(config), "n_frames": len(dataset.frames)}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "checkpoint.npz")
        log_path = os.path.join(out_dir, "loss_log.csv")
        if os.path.exists(log_path):
            os.remove(log_path)  # fresh-run semantics: never append across runs
        log = CsvLossLog(log_path, TERM_NAMES)
        save_checkpoint(
            checkpoint_path, scene.store, adam=scene.adam, step=0,
            meta={**meta_base, "step": 0},
        )

    snapshot = scene.store.values.copy()
    history = []
    final_step = 0
    for step in range(1, config.steps + 1):
        bundle = _train_step(config, dataset, scene, caches, rng, step)
        row = {name: bundle.terms.get(name, 0.0) for name in TERM_NAMES}
        history.append({"step": step, **row, "total": bundle.total})
        if log is not None:
            log.append(step, bundle)
        if not np.isfinite(bundle.total):
            scene.store.values[:] = snapshot
            raise NanLossError(step, checkpoint_path)
        final_step = step
        if step % config.checkpoint_every == 0:
            snapshot = scene.store.values.copy()
            if checkpoint_path:
                save_checkpoint(
                    checkpoint_path, scene.store, adam=scene.adam, step=step,
                    meta={**meta_base, "step": step},
                )
        if progress_every and step % progress_every == 0:
            print(f"step {step}/{config.steps} total={bundle.total:.6f}", flush=True)

    if checkpoint_path and config.steps % config.checkpoint_every != 0:
        save_checkpoint(
            checkpoint_path, scene.store, adam=scene.adam, step=final_step,
            meta={**meta_base, "step": final_step},
        )
    return TrainResult(
        config=config,
        store=scene.store,
        fields=scene.fields,
        adam=scene.adam,
        hdn=scene.hdn,
        hdn_adam=scene.hdn_adam,
        history=history,
        final_step=final_step,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
    )


def peek_checkpoint(path):
    """(step, meta) from a checkpoint file without rebuilding the scene."""
    with np.load(path) as raw:
        step = int(raw["step"])
        meta = {}
        if "meta" in raw:
            meta = json.loads(raw["meta"].tobytes().decode())
    return step, meta


@dataclass(eq=False)
class LoadedRun:
    config: TrainConfig
    store: ParamStore
    fields: FieldSet
    hdn: DigitizationNet
    adam: Adam
    hdn_adam: Adam
    step: int
    meta: dict


def load_run(path, body=None):
    """Rebuild a scene from a training checkpoint.

    The config and frame count ride in the checkpoint metadata, so the store
    layout is reconstructed exactly and values/optimizer moments restore
    bit-for-bit. The articulated body is not stored; pass the dataset's body
    (the default proxy is used otherwise). Only the scene optimizer's moments
    are checkpointed; in learned digitizer mode the digitizer optimizer
    restarts with zero moments.
    """
    step, meta = peek_checkpoint(path)
    if "config" not in meta:
        raise ValueError(f"checkpoint {path!r} has no embedded config")
    config = config_from_dict(meta["config"])
    scene = build_scene(config, body or ArticulatedBody.default(),
                        n_frames=int(meta.get("n_frames", 1)))
    step, meta = load_checkpoint(path, scene.store, adam=scene.adam)
    return LoadedRun(
        config=config,
        store=scene.store,
        fields=scene.fields,
        hdn=scene.hdn,
        adam=scene.adam,
        hdn_adam=scene.hdn_adam,
        step=step,
        meta=meta,
    )


def render_views(fields, store, cameras, poses=None, *, config=None, seed=0,
                 t_near=0.05, t_far=20.0, chunk=2048, out_dir=None):
    """Render a camera trajectory, optionally with a body pose per view.

    ``poses`` may be None (static background only), a single pose applied to
    every view, or one pose per camera. Returns one dict per view with the
    rgb/acc/depth/human_acc images; with ``out_dir`` the color frames are
    also written as ``view_###.png``.
    """
    cameras = list(cameras)
    if poses is None or not isinstance(poses, (list, tuple)):
        poses = [poses] * len(cameras)
    if len(poses) != len(cameras):
        raise ValueError(
            f"{len(cameras)} cameras but {len(poses)} poses; pass one pose, "
            "one per camera, or None"
        )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    outs = []
    for k, (cam, pose) in enumerate(zip(cameras, poses)):
        render = render_image(
            cam, fields, store, pose=pose, config=config, seed=seed,
            t_near=t_near, t_far=t_far, chunk=chunk,
        )
        if out_dir:
            save_png(os.path.join(out_dir, f"view_{k:03d}.png"), render["rgb"])
        outs.append(render)
    return outs


@dataclass
class FrameScore:
    index: int
    psnr: float
    ssim: float
    path: str = None


@dataclass
class EvalReport:
    frames: list
    psnr: float
    ssim: float
    lpips: str = LPIPS_NOTE

    def to_dict(self):
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "lpips": self.lpips,
            "frames": [
                {"index": f.index, "psnr": f.psnr, "ssim": f.ssim, "path": f.path}
                for f in self.frames
            ],
        }


def evaluate(dataset, fields, store, *, frames=None, config=None, seed=0,
             out_dir=None, chunk=2048):
    """Render held-out frames and score them; returns an :class:`EvalReport`.

    ``frames`` defaults to the dataset's test split. PSNR is capped (exact
    reconstructions score the cap rather than infinity); the perceptual
    column is reported as unavailable rather than approximated.
    """
    idxs = list(dataset.test_indices if frames is None else frames)
    if not idxs:
        raise ValueError("no frames to evaluate")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    scores = []
    for i in idxs:
        fr = dataset.frames[int(i)]
        render = render_image(
            fr.camera, fields, store,
            pose=fr.pose, config=config, seed=seed,
            t_near=dataset.t_near, t_far=dataset.t_far, chunk=chunk,
        )
        path = None
        if out_dir:
            path = os.path.join(out_dir, f"eval_{int(i):03d}.png")
            save_png(path, render["rgb"])
        scores.append(
            FrameScore(
                index=int(i),
                psnr=psnr(render["rgb"], fr.image),
                ssim=ssim(render["rgb"], fr.image),
                path=path,
            )
        )
    report = EvalReport(
        frames=scores,
        psnr=float(np.mean([s.psnr for s in scores])),
        ssim=float(np.mean([s.ssim for s in scores])),
    )
    if out_dir:
        with open(os.path.join(out_dir, "eval_report.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return report


def extract_mesh(field, store, resolution=64, bounds=None, body=None, chunk=65536):
    """March the human field's zero level set into a triangle mesh.

    Bounds default to the proxy body's canonical box (padded) when a body is
    given, else a unit-ish box around the field's configured center. A grid
    with no sign change raises with the observed SDF range, which tells the
    caller whether the level set is missing or merely outside the bounds.
    """
    if bounds is None:
        if body is not None:
            v = body.canonical_mesh.vertices
            lo, hi = v.min(axis=0) - 0.25, v.max(axis=0) + 0.25
        else:
            center = np.asarray(field.config.center, dtype=np.float64)
            lo, hi = center - 1.2, center + 1.2
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
    if resolution < 2:
        raise ValueError("need at least 2 grid samples per axis")
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    values = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        sl = slice(start, min(start + chunk, len(pts)))
        values[sl] = field.sdf_array(store, pts[sl])
    values = values.reshape(resolution, resolution, resolution)
    smin, smax = float(values.min()), float(values.max())
    if smin > 0.0 or smax < 0.0:
        raise ValueError(
            f"no zero level set: SDF range [{smin:.6f}, {smax:.6f}] on the "
            f"{resolution}^3 grid over bounds {lo.tolist()}..{hi.tolist()}"
        )
    verts, faces, touches = marching_cubes_grid(values, 0.0)
    if touches:
        warnings.warn(
            "isosurface touches the sampling bounds; the mesh is clipped — "
            "enlarge bounds",
            stacklevel=2,
        )
    scale = (hi - lo) / (resolution - 1.0)
    return TriangleMesh(lo + verts * scale, faces)


def hue_asymmetry(field, store, body, n=512, seed=0, n_dirs=4):
    """Mean hue/saturation mismatch between mirrored canonical surface points.

    Samples the proxy surface, queries the field's color at each point and at
    its sagittal mirror image (with the mirrored view direction), and returns
    the mean distance between the two in the hue/saturation embedding. Zero
    for a field that is exactly mirror-symmetric in hue and saturation.
    """
    pts = sample_surface_points(body.canonical_mesh, n, rng_seed=seed)
    total = 0.0
    for d in fibonacci_directions(n_dirs):
        dirs = np.broadcast_to(d, pts.shape).copy()
        x_m, d_m = mirror(pts, dirs)
        c_a = field.query(store, pts, dirs, trainable=False)[0]
        c_b = field.query(store, x_m, d_m, trainable=False)[0]
        diff = rgb_to_hs(c_a).data - rgb_to_hs(c_b).data
        total += float(np.linalg.norm(diff, axis=1).mean())
    return total / n_dirs


@dataclass(eq=False)
class AblationResult:
    rows: list  # dicts: variant, psnr, ssim, lpips, hue_asymmetry, steps
    reports: dict  # variant -> EvalReport
    results: dict  # variant -> TrainResult

    def to_markdown(self):
        lines = [
            "| Variant | PSNR (dB) | SSIM | LPIPS | Hue asymmetry |",
            "|---|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r['variant']} | {r['psnr']:.2f} | {r['ssim']:.4f} "
                f"| {r['lpips']} | {r['hue_asymmetry']:.4f} |"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        cols = ["variant", "psnr", "ssim", "lpips", "hue_asymmetry", "steps"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({c: r[c] for c in cols})


def ablate(config, dataset=None, variants=None, out_dir=None, *, progress_every=0):
    """Train and evaluate the requested variants under one shared seed.

    Every variant runs the identical loop — same dataset, same seed, same
    schedule — differing only in which loss terms are enabled, then scores
    the test split. Rows come back in the canonical report order regardless
    of the order requested. With ``out_dir``, each variant trains into its
    own subdirectory and the table is written as markdown and CSV.
    """
    names = list(VARIANT_ORDER) if variants is None else list(variants)
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; known: {VARIANT_ORDER}")
    ordered = [n for n in VARIANT_ORDER if n in names]
    if dataset is None:
        if not config.dataset_path:
            raise ValueError("pass a dataset or set dataset_path in the config")
        dataset = load_dataset(config.dataset_path)

    rows, reports, results = [], {}, {}
    for name in ordered:
        cfg = variant_config(config, name)
        sub = os.path.join(out_dir, VARIANT_SLUGS[name]) if out_dir else None
        result = train(cfg, dataset, sub, progress_every=progress_every)
        report = evaluate(
            dataset, result.fields, result.store,
            config=cfg.render, seed=cfg.seed, out_dir=sub,
        )
        rows.append(
            {
                "variant": name,
                "psnr": report.psnr,
                "ssim": report.ssim,
                "lpips": report.lpips,
                "hue_asymmetry": hue_asymmetry(
                    result.fields.human, result.store, dataset.body, seed=cfg.seed
                ),
                "steps": result.final_step,
            }
        )
        reports[name] = report
        results[name] = result
    out = AblationResult(rows=rows, reports=reports, results=results)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.md"), "w") as fh:
            fh.write(out.to_markdown())
        out.write_csv(os.path.join(out_dir, "ablation.csv"))
    return out
