"""Command-line surface: dataset synthesis, training, rendering, evaluation,
mesh export, and ablations.

All configuration files are YAML (JSON works too, being a YAML subset). The
``--seed`` flag, when given, overrides the seed from any config so one value
governs every random draw of the invocation.

Training config schema (all keys optional; defaults in ``TrainConfig``)::

    steps: 5000            # optimization steps
    batch: 128             # rays per step
    lr: 0.0005
    seed: 0
    dtype: float32         # or float64
    dataset_path: out/ds   # used when --dataset is not given
    enabled: [background, depth, human, mask, symmetry, sdf, hdn]
    weights: {lambda_mask: 0.1, lambda_sdf0: 1.0, sdf_half_life: 500, ...}
    render: {n_coarse: 16, n_fine: 16, n_human: 12, use_delta: false}
    background: {trunk_width: 64, ...}   # field sizes
    human: {trunk_width: 64, ...}
    n_sdf: 512
    hdn_mode: analytic     # or learned
    hdn_every: 10
    checkpoint_every: 1000

Scene spec schema for ``synth`` (see ``SceneSpec`` for every field)::

    preset: arc120         # optional base recipe: arc120 | drive-by
    n_frames: 24
    width: 64
    height: 64
    seed: 0
    trajectory: orbit      # orbit | linear
    arc_span_deg: 360.0
    split_fraction: 0.3333
    boxes:                 # optional furniture/room boxes
      - {lo: [-4,-4,0], hi: [4,4,3.2], palette: [[0.7,0.7,0.6],[0.4,0.45,0.6]],
         cell: 0.8, room: true}

Trajectory schema for ``render`` (orbit around a point)::

    frames: 12
    radius: 2.6
    height: 1.4
    center: [0.0, 0.0, 0.9]
    span_deg: 360.0
    start_deg: 0.0
    width: 64
    height_px: 64
    focal: 73.6            # optional; defaults to 1.15 * height_px
    pose_frame: 0          # optional; dataset frame whose body pose is used
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np
import yaml

from .rendering import Camera
from .synthscene import (
    BoxSpec,
    SceneSpec,
    generate_capture,
    load_dataset,
    scene_preset,
    write_dataset,
)
from .trainer import (
    VARIANT_ORDER,
    TrainConfig,
    ablate,
    config_from_dict,
    evaluate,
    extract_mesh,
    load_run,
    render_views,
    train,
)


def _load_structured(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return data


def _scene_spec_from_dict(data):
    data = dict(data)
    preset = data.pop("preset", None)
    base = scene_preset(preset) if preset else SceneSpec()
    if "boxes" in data:
        data["boxes"] = tuple(
            BoxSpec(
                lo=tuple(b["lo"]),
                hi=tuple(b["hi"]),
                palette=tuple(tuple(c) for c in b["palette"]),
                cell=b["cell"],
                room=bool(b.get("room", False)),
            )
            for b in data["boxes"]
        )
    known = SceneSpec.__dataclass_fields__
    bad = set(data) - set(known)
    if bad:
        raise ValueError(f"unknown scene spec keys: {sorted(bad)}")
    data = {
        k: tuple(v) if isinstance(v, list) and k != "boxes" else v
        for k, v in data.items()
    }
    return replace(base, **data)


def _train_config(args):
    data = _load_structured(args.config) if args.config else {}
    config = config_from_dict(data)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "dataset", None):
        config = replace(config, dataset_path=args.dataset)
    return config


def _orbit_cameras(traj):
    n = int(traj.get("frames", 12))
    radius = float(traj.get("radius", 2.6))
    height = float(traj.get("height", 1.4))
    center = np.asarray(traj.get("center", (0.0, 0.0, 0.9)), dtype=np.float64)
    span = float(traj.get("span_deg", 360.0))
    start = float(traj.get("start_deg", 0.0))
    width = int(traj.get("width", 64))
    height_px = int(traj.get("height_px", 64))
    focal = float(traj.get("focal", 1.15 * height_px))
    cams = []
    for k in range(n):
        az = np.deg2rad(start + span * (k / n if n > 1 else 0.0))
        eye = np.array(
            [center[0] + radius * np.cos(az), center[1] + radius * np.sin(az), height]
        )
        cams.append(
            Camera.look_at(eye, center, fx=focal, fy=focal, width=width, height=height_px)
        )
    return cams


def _cmd_synth(args):
    data = _load_structured(args.spec) if args.spec else {}
    if args.preset:
        data.setdefault("preset", args.preset)
    spec = _scene_spec_from_dict(data)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    capture = generate_capture(spec)
    write_dataset(capture, args.out)
    print(
        f"wrote {len(capture.frames)} frames "
        f"({len(capture.train_indices)} train / {len(capture.test_indices)} test) "
        f"to {args.out}"
    )
    return 0


def _cmd_train(args):
    config = _train_config(args)
    result = train(config, out_dir=args.out, progress_every=args.progress)
    last = result.history[-1] if result.history else {}
    print(
        f"trained {result.final_step} steps; final loss "
        f"{last.get('total', float('nan')):.6f}; checkpoint: {result.checkpoint_path}"
    )
    return 0


def _cmd_render(args):
    dataset = load_dataset(args.dataset) if args.dataset else None
    body = dataset.body if dataset else None
    run = load_run(args.checkpoint, body=body)
    t_near = dataset.t_near if dataset else 0.05
    t_far = dataset.t_far if dataset else 20.0
    seed = args.seed if args.seed is not None else run.config.seed

    if args.trajectory:
        traj = _load_structured(args.trajectory)
        cameras = _orbit_cameras(traj)
        pose = None
        if traj.get("pose_frame") is not None:
            if dataset is None:
                raise SystemExit("trajectory sets pose_frame; pass --dataset")
            pose = dataset.frames[int(traj["pose_frame"])].pose
    elif dataset is not None:
        idx = dataset.test_indices if args.split == "test" else dataset.train_indices
        cameras = [dataset.frames[i].camera for i in idx]
        pose = [dataset.frames[i].pose for i in idx]
    else:
        raise SystemExit("pass --trajectory or --dataset to pick views")

    render_views(
        run.fields, run.store, cameras, pose,
        config=run.config.render, seed=seed,
        t_near=t_near, t_far=t_far, out_dir=args.out,
    )
    print(f"rendered {len(cameras)} views to {args.out}")
    return 0


def _cmd_eval(args):
    dataset = load_dataset(args.dataset)
    run = load_run(args.checkpoint, body=dataset.body)
    if args.split == "train":
        frames = list(dataset.train_indices)
    elif args.split == "all":
        frames = list(range(len(dataset.frames)))
    else:
        frames = None  # test split
    seed = args.seed if args.seed is not None else run.config.seed
    report = evaluate(
        dataset, run.fields, run.store,
        frames=frames, config=run.config.render, seed=seed, out_dir=args.out,
    )
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_mesh(args):
    from .geometry import save_obj

    dataset = load_dataset(args.dataset) if args.dataset else None
    body = dataset.body if dataset else None
    run = load_run(args.checkpoint, body=body)
    mesh = extract_mesh(run.fields.human, run.store, resolution=args.res, body=body)
    save_obj(args.out, mesh)
    print(f"wrote {len(mesh.vertices)} vertices / {len(mesh.faces)} faces to {args.out}")
    return 0


def _cmd_ablate(args):
    config = _train_config(args)
    dataset = load_dataset(args.dataset) if args.dataset else None
    result = ablate(
        config, dataset, variants=args.variants or None,
        out_dir=args.out, progress_every=args.progress,
    )
    print(result.to_markdown(), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparseavatar",
        description=(
            "Animatable human avatar + static background reconstruction "
            "from limited-view captures"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a scene spec")
    p.add_argument("--spec", help="scene spec file (YAML/JSON)")
    p.add_argument("--preset", choices=["arc120", "drive-by"], help="base recipe")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a scene from a dataset")
    p.add_argument("--config", help="training config file (YAML/JSON)")
    p.add_argument("--out", required=True, help="run directory (checkpoint + log)")
    p.add_argument("--dataset", help="dataset directory (overrides config)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--progress", type=int, default=100, metavar="N",
                   help="print every N steps (0 silences)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render novel views from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trajectory", help="orbit trajectory file (YAML/JSON)")
    p.add_argument("--dataset", help="dataset directory (cameras/poses/body)")
    p.add_argument("--split", choices=["train", "test"], default="test",
                   help="dataset views to render when no trajectory is given")
    p.add_argument("--out", required=True, help="output image directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--out", help="optional directory for rendered frames + report")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mesh", help="extract the human isosurface as OBJ")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--res", type=int, default=64, help="grid resolution per axis")
    p.add_argument("--dataset", help="dataset directory (bounds from its body)")
    p.add_argument("--out", required=True, help="output .obj path")
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("ablate", help="train + evaluate loss-term variants")
    p.add_argument("--config", help="training config file (YAML/JSON)")
    p.add_argument("--variants", nargs="*", metavar="NAME",
                   help=f"subset of {VARIANT_ORDER} (default: all)")
    p.add_argument("--dataset", help="dataset directory (overrides config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--progress", type=int, default=0, metavar="N")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
