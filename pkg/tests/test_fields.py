import math

import numpy as np
import pytest

from sparseavatar.autodiff import ParamStore, Tape
from sparseavatar.autodiff import engine as eng
from sparseavatar.autodiff.engine import as_tensor
from sparseavatar.fields import (
    BETA_INIT,
    BackgroundField,
    DeltaConfig,
    DeltaField,
    HumanField,
    apply_delta,
    query_background,
    query_human,
    sdf_to_density,
)

from util import assert_close_rel, fd_grad_store


def randomize_segments(store, rng, prefix, scale=1.0):
    for name in store.segment_names():
        if name.startswith(prefix):
            seg = store.get(name)
            seg[:] = rng.normal(0.0, scale, size=seg.shape)


def zero_segments(store, prefix):
    for name in store.segment_names():
        if name.startswith(prefix):
            store.get(name)[:] = 0.0


def make_background(seed=0):
    store = ParamStore()
    field = BackgroundField(store, np.random.default_rng(seed))
    store.freeze()
    return store, field


def make_human(seed=0, tie_mirror=False):
    store = ParamStore()
    field = HumanField(store, np.random.default_rng(seed), tie_mirror=tie_mirror)
    store.freeze()
    return store, field


def make_delta(seed=0, n_frames=6):
    store = ParamStore()
    field = DeltaField(store, np.random.default_rng(seed), n_frames=n_frames)
    store.freeze()
    return store, field


def unit_rows(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# background field


def test_background_zeroed_weights_constant_outputs():
    store, field = make_background()
    zero_segments(store, "bkgr/")
    rng = np.random.default_rng(1)
    x = rng.normal(size=(16, 3))
    d = unit_rows(rng, 16)
    for level in ("coarse", "fine"):
        rgb, sigma = query_background(field, store, x, d, level)
        assert np.allclose(sigma.data, math.log(2.0), atol=1e-12)
        assert np.allclose(rgb.data, 0.5, atol=1e-12)


def test_background_determinism():
    store, field = make_background()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 3))
    d = unit_rows(rng, 8)
    rgb1, sig1 = field.query(store, x, d, "fine")
    rgb2, sig2 = field.query(store, x, d, "fine")
    assert np.array_equal(rgb1.data, rgb2.data)
    assert np.array_equal(sig1.data, sig2.data)


def test_background_density_nonnegative_under_random_weights():
    store, field = make_background()
    rng = np.random.default_rng(3)
    total = 0
    for trial in range(5):
        randomize_segments(store, rng, "bkgr/", scale=1.5)
        x = rng.normal(size=(2000, 3)) * 2.0
        d = unit_rows(rng, 2000)
        level = "coarse" if trial % 2 == 0 else "fine"
        rgb, sigma = field.query(store, x, d, level)
        assert np.all(sigma.data >= 0.0)
        assert np.all((rgb.data >= 0.0) & (rgb.data <= 1.0))
        assert np.all(np.isfinite(sigma.data))
        total += len(x)
    assert total >= 10_000


def test_background_unknown_level_rejected():
    store, field = make_background()
    with pytest.raises(ValueError):
        field.query(store, np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]), "medium")


# ---------------------------------------------------------------------------
# human field


def test_human_sdf_ignores_direction():
    store, field = make_human(seed=4)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3)) * 0.5
    dirs = unit_rows(rng, 8)
    xs = np.repeat(x, 8, axis=0)
    ds = np.tile(dirs, (4, 1))
    _, s = query_human(field, store, xs, ds)
    per_point = s.data.reshape(4, 8)
    assert np.all(per_point == per_point[:, :1])


def test_human_zeroed_weights_sdf_equals_bias():
    store, field = make_human(seed=6)
    zero_segments(store, "human/")
    last = len(field.trunk.spec.hidden)
    store.get(f"human/trunk/b{last}")[0] = 0.37
    rng = np.random.default_rng(7)
    x = rng.normal(size=(32, 3))
    s = field.sdf(store, x)
    assert np.allclose(s.data, 0.37, atol=1e-12)


def test_human_color_in_unit_cube_and_sdf_finite():
    store, field = make_human(seed=8)
    rng = np.random.default_rng(9)
    for _ in range(3):
        randomize_segments(store, rng, "human/trunk", scale=0.8)
        randomize_segments(store, rng, "human/color", scale=0.8)
        x = rng.normal(size=(1500, 3))
        rgb, s = field.query(store, x, unit_rows(rng, 1500))
        assert np.all((rgb.data >= 0.0) & (rgb.data <= 1.0))
        assert np.all(np.isfinite(s.data))


def test_human_sampled_lipschitz_smoke():
    store, field = make_human(seed=10)
    rng = np.random.default_rng(11)
    x = rng.uniform(-0.8, 0.8, size=(200, 3))
    grad = field.spatial_gradient(store, x, eps=1e-3).data
    k_hat = np.linalg.norm(grad, axis=1).max()
    eps = 1e-4
    e = unit_rows(rng, 200)
    base = field.sdf(store, x).data
    moved = field.sdf(store, x + eps * e).data
    assert np.all(np.abs(moved - base) <= (3.0 * k_hat + 1.0) * eps)


def test_human_spatial_gradient_matches_manual_differences():
    store, field = make_human(seed=12)
    rng = np.random.default_rng(13)
    x = rng.normal(size=(10, 3)) * 0.4
    eps = 1e-3
    grad = field.spatial_gradient(store, x, eps=eps).data
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = eps
        manual = (field.sdf_array(store, x + e) - field.sdf_array(store, x - e)) / (2 * eps)
        assert np.allclose(grad[:, axis], manual, atol=1e-10)


def test_human_beta_initial_value_and_positivity():
    store, field = make_human(seed=14)
    assert abs(field.beta(store).data[0] - BETA_INIT) < 1e-9
    store.get("human/beta_raw")[0] = -5.0
    assert field.beta(store).data[0] > 0.0


def test_mirror_tied_field_identical_at_reflected_queries():
    store, field = make_human(seed=15, tie_mirror=True)
    rng = np.random.default_rng(16)
    x = rng.normal(size=(64, 3)) * 0.6
    d = unit_rows(rng, 64)
    xm = x * np.array([-1.0, 1.0, 1.0])
    dm = d * np.array([-1.0, 1.0, 1.0])
    rgb, s = field.query(store, x, d)
    rgb_m, s_m = field.query(store, xm, dm)
    assert np.array_equal(rgb.data, rgb_m.data)
    assert np.array_equal(s.data, s_m.data)


def test_human_tensor_input_matches_array_path_and_carries_gradients():
    store = ParamStore()
    rng = np.random.default_rng(17)
    field = HumanField(store, rng, tie_mirror=True)
    delta = DeltaField(store, rng, n_frames=3)
    store.freeze()
    x = rng.normal(size=(6, 3)) * 0.4
    d = unit_rows(rng, 6)

    rgb_a, s_a = field.query(store, x, d)
    tape = Tape()
    rgb_t, s_t = field.query(store, as_tensor(x.astype(store.dtype)), d, tape)
    assert np.array_equal(rgb_t.data, rgb_a.data)
    assert np.array_equal(s_t.data, s_a.data)

    randomize_segments(store, rng, "delta/", scale=0.5)
    tape = Tape()
    offset = delta.query(store, x, np.zeros(6, dtype=np.int64), tape)
    warped = eng.add(as_tensor(x.astype(store.dtype)), offset)
    loss = eng.tsum(eng.square(field.sdf(store, warped, tape)))
    store.zero_grad()
    eng.backward(tape, loss)
    assert np.linalg.norm(store.get_grad("delta/mlp/W0")) > 0.0


# ---------------------------------------------------------------------------
# SDF-to-density transform


def test_density_surface_value():
    sigma = sdf_to_density(np.array([0.0]), np.array([0.1]))
    assert abs(sigma.data[0] - 5.0) < 1e-12


def test_density_deep_outside_limit():
    beta = 0.1
    sigma = sdf_to_density(np.array([10 * beta]), np.array([beta]))
    assert sigma.data[0] < 1e-4 / beta


def test_density_inside_value():
    expected = (1.0 / 0.1) * (1.0 - 0.5 * math.exp(-1.0))
    sigma = sdf_to_density(np.array([-0.1]), np.array([0.1]))
    assert abs(sigma.data[0] - expected) < 1e-9


def test_density_strictly_monotone_on_dense_grid():
    s = np.linspace(-1.0, 1.0, 2001)
    sigma = sdf_to_density(s, np.array([0.1])).data
    assert np.all(np.diff(sigma) < 0.0)
    wide = sdf_to_density(np.linspace(-10.0, 10.0, 4001), np.array([0.1])).data
    assert np.all(np.diff(wide) <= 0.0)
    assert np.all(wide >= 0.0)
    assert np.all(np.isfinite(wide))


def test_density_limits():
    beta = 0.25
    inside = sdf_to_density(np.array([-30 * beta]), np.array([beta])).data[0]
    outside = sdf_to_density(np.array([30 * beta]), np.array([beta])).data[0]
    assert abs(inside - 1.0 / beta) < 1e-9
    assert outside < 1e-9


def test_density_gradients_match_finite_differences():
    store = ParamStore()
    store.register("s", np.array([-0.3, -0.12, 0.08, 0.2, 0.35]))
    store.register("beta", np.array([0.13]))
    store.freeze()
    coeffs = np.array([0.7, -1.3, 0.4, 1.1, -0.6])

    def loss_value():
        sig = sdf_to_density(store.get("s"), store.get("beta"))
        return float(np.sum(coeffs * sig.data))

    tape = Tape()
    sig = sdf_to_density(store.tensor("s", tape), store.tensor("beta", tape))
    loss = eng.tsum(eng.mul(sig, as_tensor(coeffs)))
    store.zero_grad()
    eng.backward(tape, loss)
    numeric = fd_grad_store(loss_value, store, h=1e-6)
    assert_close_rel(store.grads, numeric, rtol=1e-4)


def test_density_rejects_nonpositive_beta():
    for bad in (0.0, -0.1):
        with pytest.raises(ValueError):
            sdf_to_density(np.array([0.0]), np.array([bad]))


def test_density_printed_variant_clamped_at_zero():
    beta = 0.1
    at_surface = sdf_to_density(np.array([0.0]), np.array([beta]), form="printed").data[0]
    inside = sdf_to_density(np.array([-0.1]), np.array([beta]), form="printed").data[0]
    outside = sdf_to_density(np.array([0.5]), np.array([beta]), form="printed").data[0]
    assert at_surface == 0.0
    assert abs(inside - (1.0 / (2 * beta)) * (1.0 - math.exp(-1.0))) < 1e-9
    assert outside == 0.0
    grid = sdf_to_density(np.linspace(-3, 3, 601), np.array([beta]), form="printed").data
    assert np.all(grid >= 0.0)


def test_density_unknown_form_rejected():
    with pytest.raises(ValueError):
        sdf_to_density(np.array([0.0]), np.array([0.1]), form="gaussian")


# ---------------------------------------------------------------------------
# per-frame correction field


def test_delta_zero_initialized_offsets_are_zero():
    store, field = make_delta()
    rng = np.random.default_rng(18)
    x = rng.normal(size=(50, 3))
    off = apply_delta(field, store, x, rng.integers(0, 6, size=50))
    assert np.all(off.data == 0.0)


def test_delta_offset_norm_capped():
    store, field = make_delta(seed=19)
    rng = np.random.default_rng(20)
    cap = field.config.delta_max
    total = 0
    for _ in range(5):
        randomize_segments(store, rng, "delta/", scale=5.0)
        x = rng.normal(size=(2000, 3)) * 2.0
        frames = rng.integers(0, field.n_frames, size=2000)
        off = field.query(store, x, frames)
        assert np.all(np.linalg.norm(off.data, axis=1) <= cap + 1e-12)
        total += len(x)
    assert total >= 10_000


def test_delta_unknown_frame_gives_zero_offset():
    store, field = make_delta(seed=21)
    rng = np.random.default_rng(22)
    randomize_segments(store, rng, "delta/", scale=2.0)
    x = rng.normal(size=(9, 3))
    frames = np.array([-1, -5, field.n_frames, field.n_frames + 3, 0, 1, -2, 8, 100])
    off = field.query(store, x, frames)
    known = (frames >= 0) & (frames < field.n_frames)
    assert np.all(off.data[~known] == 0.0)
    assert np.any(off.data[known] != 0.0)


def test_delta_determinism():
    store, field = make_delta(seed=23)
    rng = np.random.default_rng(24)
    randomize_segments(store, rng, "delta/", scale=1.0)
    x = rng.normal(size=(12, 3))
    frames = rng.integers(0, field.n_frames, size=12)
    a = field.query(store, x, frames)
    b = field.query(store, x, frames)
    assert np.array_equal(a.data, b.data)


def test_delta_config_roundtrip_shapes():
    store = ParamStore()
    field = DeltaField(store, np.random.default_rng(25), n_frames=4,
                       config=DeltaConfig(pos_bands=4, hidden=(32,), embed_dim=8, delta_max=0.02))
    store.freeze()
    off = field.query(store, np.zeros((3, 3)), np.array([0, 1, 2]))
    assert off.data.shape == (3, 3)
    assert np.all(np.abs(off.data) <= 0.02)
