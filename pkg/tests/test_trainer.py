"""Tests for the training loop, evaluation, mesh export, and ablations."""

import copy
import filecmp
import json
import os

import numpy as np
import pytest

from sparseavatar.autodiff.store import Adam
from sparseavatar.geometry import MeshDistanceIndex
from sparseavatar.losses import LossWeights, sdf_weight
from sparseavatar.rendering import Camera, RenderConfig, render_image
from sparseavatar.synthscene import (
    generate_capture,
    load_dataset,
    scene_preset,
    write_dataset,
)
from sparseavatar.trainer import (
    ALLOWED_TERMS,
    BASE_TERMS,
    TERM_NAMES,
    VARIANT_ORDER,
    VARIANTS,
    AblationResult,
    NanLossError,
    TrainConfig,
    ablate,
    build_scene,
    config_from_dict,
    config_to_dict,
    evaluate,
    extract_mesh,
    hue_asymmetry,
    load_run,
    peek_checkpoint,
    render_views,
    train,
    variant_config,
)

# ---------------------------------------------------------------------------
# independent oracles


def moving_average_reference(values, window):
    """Plain-loop trailing moving average."""
    out = []
    for i in range(len(values) - window + 1):
        out.append(sum(values[i : i + window]) / window)
    return out


def mesh_volume_reference(mesh):
    """Signed-tetrahedron volume sum (divergence theorem), plain loop."""
    v = mesh.vertices
    total = 0.0
    for a, b, c in mesh.faces:
        total += np.linalg.det(np.stack([v[a], v[b], v[c]])) / 6.0
    return abs(total)


class SphereStub:
    """Analytic sphere SDF standing in for a trained human field."""

    def __init__(self, center=(0.0, 0.0, 0.0), radius=0.5, bias=0.0):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = radius
        self.bias = bias

    def sdf_array(self, store, x):
        d = np.linalg.norm(x - self.center, axis=1) - self.radius
        return d + self.bias


# ---------------------------------------------------------------------------
# shared fixtures

SMALL_RENDER = RenderConfig(n_coarse=12, n_fine=12, n_human=10, use_delta=False)


def small_config(**overrides):
    base = dict(
        steps=10,
        batch=32,
        seed=0,
        dtype="float32",
        render=SMALL_RENDER,
        n_sdf=64,
        n_symmetry=64,
        n_eikonal=64,
        hdn_every=5,
        hdn_points=120,
        hdn_dirs=3,
        hdn_resolution=20,
        checkpoint_every=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def arc48():
    return generate_capture(scene_preset("arc120", width=48, height=48))


@pytest.fixture(scope="module")
def trained_short(arc48):
    cfg = TrainConfig(steps=150, batch=64, seed=0, checkpoint_every=150, render=SMALL_RENDER)
    return train(cfg, arc48)


# ---------------------------------------------------------------------------
# configuration


def test_config_rejects_invalid_settings():
    with pytest.raises(ValueError, match="steps"):
        TrainConfig(steps=0)
    with pytest.raises(ValueError, match="batch"):
        TrainConfig(batch=0)
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError, match="dtype"):
        TrainConfig(dtype="float16")
    with pytest.raises(ValueError, match="unknown loss terms"):
        TrainConfig(enabled=frozenset({"background", "glow"}))
    with pytest.raises(ValueError, match="eikonal"):
        TrainConfig(enabled=BASE_TERMS | {"sdf", "eikonal"})
    with pytest.raises(ValueError, match="hdn_mode"):
        TrainConfig(hdn_mode="frozen")


def test_config_json_roundtrip():
    cfg = small_config(seed=11, dtype="float64", hdn_mode="learned",
                       enabled=BASE_TERMS | {"eikonal", "hdn"})
    as_json = json.dumps(config_to_dict(cfg))
    assert config_from_dict(json.loads(as_json)) == cfg
    with pytest.raises(ValueError, match="unknown config keys"):
        config_from_dict({"step_count": 5})


def test_variant_table_term_sets():
    assert VARIANTS["base"] == BASE_TERMS
    assert VARIANTS["+symm"] == BASE_TERMS | {"symmetry"}
    assert VARIANTS["+HDN"] == BASE_TERMS | {"hdn"}
    assert VARIANTS["+symm+SDF"] == BASE_TERMS | {"symmetry", "sdf"}
    assert VARIANTS["no-SDF"] == BASE_TERMS | {"symmetry", "hdn"}
    assert VARIANTS["eikonal"] == BASE_TERMS | {"symmetry", "hdn", "eikonal"}
    assert VARIANTS["full"] == BASE_TERMS | {"symmetry", "sdf", "hdn"}
    assert VARIANT_ORDER == [
        "base", "+symm", "+HDN", "+symm+SDF", "no-SDF", "eikonal", "full",
    ]
    assert all(terms <= ALLOWED_TERMS for terms in VARIANTS.values())
    with pytest.raises(ValueError, match="unknown variant"):
        variant_config(small_config(), "baseline")


# ---------------------------------------------------------------------------
# the training loop


def test_all_losses_disabled_leaves_parameters_unchanged(arc48):
    cfg = small_config(steps=4, enabled=frozenset())
    fresh = build_scene(cfg, arc48.body)
    result = train(cfg, arc48)
    assert np.array_equal(result.store.values, fresh.store.values)
    assert all(h["total"] == 0 for h in result.history)


def test_loss_decreases_over_200_steps_on_64px_arc():
    capture = generate_capture(scene_preset("arc120", width=64, height=64))
    result = train(TrainConfig(steps=200, batch=128, seed=0, checkpoint_every=200), capture)
    totals = [h["total"] for h in result.history]
    smoothed = moving_average_reference(totals, 20)
    assert smoothed[-1] < smoothed[0]


def test_identical_config_and_seed_bit_identical_runs(arc48, tmp_path):
    cfg = small_config(steps=8)
    res_a = train(cfg, arc48, str(tmp_path / "a"))
    res_b = train(cfg, arc48, str(tmp_path / "b"))
    assert res_a.history == res_b.history
    assert np.array_equal(res_a.store.values, res_b.store.values)
    assert filecmp.cmp(res_a.log_path, res_b.log_path, shallow=False)
    img_a = render_image(arc48.frames[0].camera, res_a.fields, res_a.store,
                         pose=arc48.frames[0].pose, config=cfg.render, seed=3)
    img_b = render_image(arc48.frames[0].camera, res_b.fields, res_b.store,
                         pose=arc48.frames[0].pose, config=cfg.render, seed=3)
    assert np.array_equal(img_a["rgb"], img_b["rgb"])


def test_loss_log_has_fixed_columns(arc48, tmp_path):
    cfg = small_config(steps=3, enabled=BASE_TERMS)
    result = train(cfg, arc48, str(tmp_path))
    with open(result.log_path) as fh:
        header = fh.readline().strip().split(",")
    assert header == ["step", *TERM_NAMES, "total"]
    # disabled regularizers log zero but keep their columns
    assert all(h["symmetry_color"] == 0.0 and h["sdf"] == 0.0 for h in result.history)


def test_sdf_weight_schedule_and_wiring(arc48):
    assert sdf_weight(0, 2.0, 50) == 2.0
    assert sdf_weight(50, 2.0, 50) == 1.0
    assert sdf_weight(100, 2.0, 50) == 0.5
    values = [sdf_weight(s, 2.0, 50) for s in range(0, 200, 7)]
    assert all(a > b for a, b in zip(values, values[1:]))

    weights = LossWeights(lambda_sdf0=2.0, sdf_half_life=50)
    cfg = small_config(steps=6, enabled=frozenset({"sdf"}), weights=weights)
    result = train(cfg, arc48)
    for h in result.history:
        assert h["total"] == sdf_weight(h["step"], 2.0, 50) * h["sdf"]


def test_train_accepts_dataset_written_to_disk(arc48, tmp_path):
    root = str(tmp_path / "ds")
    write_dataset(arc48, root)
    dataset = load_dataset(root)
    cfg = small_config(steps=3)
    res_a = train(cfg, dataset)
    res_b = train(cfg, dataset)
    assert res_a.history == res_b.history
    assert len(res_a.history) == 3


def test_nan_loss_aborts_and_retains_checkpoint(arc48, tmp_path):
    poisoned = copy.deepcopy(arc48)
    for i in poisoned.train_indices:
        poisoned.frames[i].image[:] = np.nan
    cfg = small_config(steps=6)
    out = str(tmp_path)
    with pytest.raises(NanLossError) as err:
        train(cfg, poisoned, out)
    assert err.value.step == 1
    step, meta = peek_checkpoint(os.path.join(out, "checkpoint.npz"))
    assert step == 0
    assert meta["config"]["steps"] == 6
    run = load_run(os.path.join(out, "checkpoint.npz"), body=arc48.body)
    assert np.isfinite(run.store.values).all()
    with open(os.path.join(out, "loss_log.csv")) as fh:
        last = fh.readlines()[-1]
    assert "nan" in last


def test_checkpoint_roundtrip_restores_everything(arc48, trained_short, tmp_path):
    # re-save the trained scene, reload it, and compare render + optimizer
    from sparseavatar.autodiff.store import save_checkpoint

    path = str(tmp_path / "ck.npz")
    save_checkpoint(
        path, trained_short.store, adam=trained_short.adam,
        step=trained_short.final_step,
        meta={"config": config_to_dict(trained_short.config),
              "n_frames": len(arc48.frames)},
    )
    run = load_run(path, body=arc48.body)
    assert run.step == trained_short.final_step
    assert np.array_equal(run.store.values, trained_short.store.values)
    assert np.array_equal(run.adam.m, trained_short.adam.m)
    assert np.array_equal(run.adam.v, trained_short.adam.v)
    fr = arc48.frames[2]
    before = render_image(fr.camera, trained_short.fields, trained_short.store,
                          pose=fr.pose, config=SMALL_RENDER, seed=7)
    after = render_image(fr.camera, run.fields, run.store,
                         pose=fr.pose, config=run.config.render, seed=7)
    assert np.array_equal(before["rgb"], after["rgb"])
    assert np.array_equal(before["depth"], after["depth"])


def test_learned_digitizer_cotraining_logs_and_segments(arc48):
    cfg = small_config(steps=8, hdn_mode="learned", hdn_every=4,
                       hdn_finetune_points=150)
    result = train(cfg, arc48)
    assert any(name.startswith("hdn/") for name in result.store.segment_names())
    for h in result.history:
        if h["step"] % 4 == 0:
            assert h["finetune_occupancy"] > 0.0
        else:
            assert h["finetune_occupancy"] == 0.0
            assert h["hdn_geometry"] == 0.0


# ---------------------------------------------------------------------------
# rendering from checkpoints


def test_render_same_seed_bit_exact(arc48, trained_short):
    fr = arc48.frames[0]
    a = render_image(fr.camera, trained_short.fields, trained_short.store,
                     pose=fr.pose, config=SMALL_RENDER, seed=5)
    b = render_image(fr.camera, trained_short.fields, trained_short.store,
                     pose=fr.pose, config=SMALL_RENDER, seed=5)
    for key in ("rgb", "acc", "depth", "human_acc"):
        assert np.array_equal(a[key], b[key])


def test_render_human_outside_frustum_equals_background_only(arc48, trained_short):
    from dataclasses import replace

    fr = arc48.frames[0]
    far = replace(fr.pose, root_translation=np.asarray(fr.pose.root_translation) + 60.0)
    moved = render_image(fr.camera, trained_short.fields, trained_short.store,
                         pose=far, config=SMALL_RENDER, seed=2,
                         t_near=arc48.t_near, t_far=arc48.t_far)
    empty = render_image(fr.camera, trained_short.fields, trained_short.store,
                         pose=None, config=SMALL_RENDER, seed=2,
                         t_near=arc48.t_near, t_far=arc48.t_far)
    for key in ("rgb", "acc", "depth", "human_acc"):
        assert np.array_equal(moved[key], empty[key])
    assert not moved["human_acc"].any()


def test_novel_back_view_shows_the_human(arc48, trained_short):
    fr = arc48.frames[0]
    eye = np.asarray(fr.camera.origin)
    center = np.array([0.0, 0.0, 0.9])
    back_eye = center - (eye - center) * np.array([1.0, 1.0, 0.0])
    back_eye[2] = eye[2]
    cam = Camera.look_at(back_eye, center, fx=fr.camera.fx, fy=fr.camera.fy,
                         width=fr.camera.width, height=fr.camera.height)
    render = render_image(cam, trained_short.fields, trained_short.store,
                          pose=fr.pose, config=SMALL_RENDER, seed=1,
                          t_near=arc48.t_near, t_far=arc48.t_far)
    assert (render["human_acc"] > 0.05).mean() >= 0.01


def test_render_views_broadcasts_poses_and_writes_frames(arc48, trained_short, tmp_path):
    cams = [arc48.frames[i].camera for i in (0, 1)]
    outs = render_views(trained_short.fields, trained_short.store, cams,
                        poses=arc48.frames[0].pose, config=SMALL_RENDER,
                        seed=0, t_near=arc48.t_near, t_far=arc48.t_far,
                        out_dir=str(tmp_path))
    assert len(outs) == 2
    assert outs[0]["rgb"].shape == (48, 48, 3)
    assert os.path.exists(tmp_path / "view_000.png")
    assert os.path.exists(tmp_path / "view_001.png")
    with pytest.raises(ValueError, match="poses"):
        render_views(trained_short.fields, trained_short.store, cams,
                     poses=[arc48.frames[0].pose] * 3, config=SMALL_RENDER)


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_scores_and_manifest(arc48, trained_short, tmp_path):
    picks = list(arc48.test_indices[:2])
    report = evaluate(arc48, trained_short.fields, trained_short.store,
                      frames=picks, config=SMALL_RENDER, seed=0,
                      out_dir=str(tmp_path))
    assert [f.index for f in report.frames] == picks
    for f in report.frames:
        assert np.isfinite(f.psnr) and f.psnr <= 99.0
        assert -1.0 <= f.ssim <= 1.0
        assert os.path.exists(f.path)
    assert report.psnr == pytest.approx(np.mean([f.psnr for f in report.frames]))
    assert report.ssim == pytest.approx(np.mean([f.ssim for f in report.frames]))
    assert report.lpips.startswith("n/a")
    with open(tmp_path / "eval_report.json") as fh:
        manifest = json.load(fh)
    assert len(manifest["frames"]) == 2


def test_evaluate_defaults_to_test_split(trained_short):
    small = generate_capture(scene_preset("arc120", width=32, height=32, n_frames=6))
    cfg = small_config(steps=2, batch=16)
    result = train(cfg, small)
    report = evaluate(small, result.fields, result.store, config=cfg.render, seed=0)
    assert len(report.frames) == len(small.test_indices)
    with pytest.raises(ValueError, match="no frames"):
        evaluate(small, result.fields, result.store, frames=[], config=cfg.render)


# ---------------------------------------------------------------------------
# mesh extraction


def test_extract_mesh_matches_analytic_sphere():
    stub = SphereStub(radius=0.5)
    bounds = (np.full(3, -0.8), np.full(3, 0.8))
    mesh = extract_mesh(stub, None, resolution=32, bounds=bounds)
    cell = 1.6 / 31
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 0.5).max() <= 2 * cell


def test_extract_mesh_volume_converges_with_resolution():
    stub = SphereStub(radius=0.5)
    bounds = (np.full(3, -0.8), np.full(3, 0.8))
    coarse = extract_mesh(stub, None, resolution=24, bounds=bounds)
    fine = extract_mesh(stub, None, resolution=48, bounds=bounds)
    v_coarse = mesh_volume_reference(coarse)
    v_fine = mesh_volume_reference(fine)
    analytic = 4.0 / 3.0 * np.pi * 0.5**3
    assert abs(v_fine - v_coarse) / v_fine < 0.05
    assert abs(v_fine - analytic) / analytic < 0.05


def test_extract_mesh_reports_sdf_range_when_no_surface():
    stub = SphereStub(radius=0.5, bias=5.0)
    bounds = (np.full(3, -0.8), np.full(3, 0.8))
    with pytest.raises(ValueError, match="no zero level set") as err:
        extract_mesh(stub, None, resolution=16, bounds=bounds)
    assert "range" in str(err.value)


def test_sdf_dominant_training_matches_proxy_surface(arc48):
    cfg = small_config(
        steps=400, batch=8, enabled=frozenset({"sdf"}), n_sdf=512,
        render=RenderConfig(n_coarse=4, n_fine=4, n_human=4, use_delta=False),
        weights=LossWeights(sdf_half_life=10**9), checkpoint_every=400,
    )
    result = train(cfg, arc48)
    mesh = extract_mesh(result.fields.human, result.store, resolution=48, body=arc48.body)
    dist, _ = MeshDistanceIndex(arc48.body.canonical_mesh).unsigned(mesh.vertices)
    assert np.median(dist) <= 0.02


# ---------------------------------------------------------------------------
# symmetry diagnostics


def test_hue_asymmetry_zero_for_mirror_tied_field(arc48):
    cfg = small_config(tie_mirror=True)
    scene = build_scene(cfg, arc48.body)
    value = hue_asymmetry(scene.fields.human, scene.store, arc48.body, n=128, seed=0)
    assert value <= 1e-12


def test_symmetry_training_lowers_hue_asymmetry(arc48):
    cfg = TrainConfig(steps=150, batch=64, seed=0, checkpoint_every=150, render=SMALL_RENDER)
    res_base = train(variant_config(cfg, "base"), arc48)
    res_symm = train(variant_config(cfg, "+symm"), arc48)
    asym_base = hue_asymmetry(res_base.fields.human, res_base.store, arc48.body, seed=0)
    asym_symm = hue_asymmetry(res_symm.fields.human, res_symm.store, arc48.body, seed=0)
    assert asym_symm < asym_base


# ---------------------------------------------------------------------------
# ablation harness


def test_ablate_emits_one_row_per_variant_in_report_order(arc48, tmp_path):
    cfg = small_config(steps=6, batch=16, n_sdf=32, n_symmetry=32, n_eikonal=32,
                       hdn_every=3, hdn_points=60, hdn_resolution=16,
                       checkpoint_every=6,
                       render=RenderConfig(n_coarse=6, n_fine=6, n_human=6, use_delta=False))
    result = ablate(cfg, arc48, variants=["full", "eikonal", "base", "+HDN"],
                    out_dir=str(tmp_path))
    assert [r["variant"] for r in result.rows] == ["base", "+HDN", "eikonal", "full"]
    table = result.to_markdown()
    assert table.count("\n") == 2 + 4  # header + separator + one line per row
    assert os.path.exists(tmp_path / "ablation.csv")
    assert os.path.exists(tmp_path / "ablation.md")

    base_history = result.results["base"].history
    assert all(
        h["symmetry_color"] == 0 and h["sdf"] == 0 and h["hdn_geometry"] == 0
        and h["eikonal"] == 0
        for h in base_history
    )
    eik_history = result.results["eikonal"].history
    assert all(h["sdf"] == 0 for h in eik_history)
    assert any(h["eikonal"] != 0 for h in eik_history)

    for row in result.rows:
        assert np.isfinite(row["psnr"]) and -1.0 <= row["ssim"] <= 1.0

    with pytest.raises(ValueError, match="unknown variants"):
        ablate(cfg, arc48, variants=["base", "bogus"])


def test_ablation_table_serializes(tmp_path):
    rows = [
        {"variant": "base", "psnr": 20.0, "ssim": 0.8, "lpips": "n/a",
         "hue_asymmetry": 0.4, "steps": 10},
        {"variant": "full", "psnr": 23.0, "ssim": 0.9, "lpips": "n/a",
         "hue_asymmetry": 0.1, "steps": 10},
    ]
    table = AblationResult(rows=rows, reports={}, results={})
    text = table.to_markdown()
    assert text.splitlines()[0].startswith("| Variant |")
    assert "| base | 20.00 |" in text
    path = str(tmp_path / "t.csv")
    table.write_csv(path)
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "variant,psnr,ssim,lpips,hue_asymmetry,steps"
    assert len(lines) == 3
