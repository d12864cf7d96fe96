"""Tests for PSNR/SSIM against independent scalar references."""

import math

import numpy as np
import pytest

from sparseavatar.metrics import gaussian_window, mse, psnr, ssim

# ---------------------------------------------------------------------------
# oracles: scalar reimplementations with plain loops


def psnr_reference(a, b, cap=99.0):
    total = 0.0
    n = 0
    for x, y in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        total += (float(x) - float(y)) ** 2
        n += 1
    err = total / n
    if err <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / err))


def ssim_reference(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Pixel-loop SSIM over valid window positions, per channel averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    kern = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            di = i - (size - 1) / 2.0
            dj = j - (size - 1) / 2.0
            kern[i, j] = math.exp(-(di * di) / (2 * sigma * sigma)) * math.exp(
                -(dj * dj) / (2 * sigma * sigma)
            )
    kern /= kern.sum()
    c1, c2 = k1 * k1, k2 * k2
    h, w, nc = a.shape
    per_channel = []
    for c in range(nc):
        vals = []
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                wa = a[i : i + size, j : j + size, c]
                wb = b[i : i + size, j : j + size, c]
                mu_a = float((wa * kern).sum())
                mu_b = float((wb * kern).sum())
                var_a = float((wa * wa * kern).sum()) - mu_a * mu_a
                var_b = float((wb * wb * kern).sum()) - mu_b * mu_b
                cov = float((wa * wb * kern).sum()) - mu_a * mu_b
                num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
                den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
                vals.append(num / den)
        per_channel.append(sum(vals) / len(vals))
    return sum(per_channel) / len(per_channel)


# ---------------------------------------------------------------------------


def test_psnr_identity_is_capped():
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert psnr(img, img) == 99.0
    assert psnr(img, img, cap=80.0) == 80.0


def test_psnr_of_mse_one_percent_is_exactly_twenty():
    # 16 of 25 pixels with error 0.125 (exactly representable): the error
    # sum is 16 * 0.015625 = 0.25 with no rounding, and 0.25/25 is the
    # double closest to 0.01, so the MSE is exact and the dB value lands
    # on 20 with no float drift
    gt = np.zeros((5, 5))
    pred = np.zeros((5, 5))
    pred.ravel()[:16] = 0.125
    assert mse(pred, gt) == 0.01
    assert psnr(pred, gt) == 20.0
    # the near-miss construction (constant 0.1 error) stays within an ulp
    assert abs(psnr(np.full((8, 8), 0.1), np.zeros((8, 8))) - 20.0) < 1e-12


def test_mse_and_psnr_match_scalar_reference():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.uniform(size=(13, 17, 3))
        b = rng.uniform(size=(13, 17, 3))
        assert abs(psnr(a, b) - psnr_reference(a, b)) < 1e-6
        assert abs(mse(a, b) - float(np.mean((a - b) ** 2))) < 1e-15


def test_psnr_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_gaussian_window_normalized_and_symmetric():
    k = gaussian_window()
    assert k.shape == (11, 11)
    assert abs(k.sum() - 1.0) < 1e-12
    assert np.abs(k - k.T).max() < 1e-15
    assert np.abs(k - k[::-1, ::-1]).max() < 1e-15
    assert k[5, 5] == k.max()


def test_ssim_identity_is_one():
    img = np.random.default_rng(2).uniform(size=(20, 24, 3))
    assert abs(ssim(img, img) - 1.0) < 1e-12


def test_ssim_matches_scalar_reference_on_random_pairs():
    rng = np.random.default_rng(3)
    for trial in range(6):
        shape = (15, 18) if trial % 2 == 0 else (14, 16, 3)
        a = rng.uniform(size=shape)
        b = np.clip(a + rng.normal(0.0, 0.2, size=shape), 0.0, 1.0)
        assert abs(ssim(a, b) - ssim_reference(a, b)) < 1e-6


def test_ssim_of_negative_image_is_low():
    img = np.random.default_rng(4).uniform(size=(24, 24))
    assert ssim(img, 1.0 - img) < 0.1


def test_ssim_is_bounded():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.uniform(size=(16, 16))
        b = rng.uniform(size=(16, 16))
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0


def test_ssim_decreases_with_noise_level():
    rng = np.random.default_rng(6)
    yy, xx = np.meshgrid(np.linspace(0, 1, 24), np.linspace(0, 1, 24), indexing="ij")
    img = 0.25 + 0.5 * yy * xx
    noise = rng.normal(0.0, 1.0, img.shape)
    scores = [ssim(img, np.clip(img + s * noise, 0, 1)) for s in (0.0, 0.05, 0.2)]
    assert scores[0] > scores[1] > scores[2]


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))
