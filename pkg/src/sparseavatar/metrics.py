"""Image quality metrics: PSNR and SSIM on [0, 1] images.

PSNR is 10*log10(1/MSE), reported as a configurable cap (default 99 dB) when
the images match exactly. SSIM follows the standard formulation: an 11x11
Gaussian window (sigma 1.5), constants K1=0.01 / K2=0.03 at unit dynamic
range, statistics compared over the valid (fully covered) window positions
only. Color images score each channel separately and average.
"""

from __future__ import annotations

import numpy as np

__all__ = ["mse", "psnr", "ssim", "gaussian_window"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mse(prediction, target):
    """Mean squared error over all pixels and channels."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    return float(np.mean((prediction - target) ** 2))


def psnr(prediction, target, cap=99.0):
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Evaluated as -10*log10(MSE), which keeps decade MSEs exact (an MSE of
    0.01 gives exactly 20 dB) where 10*log10(1/MSE) would lose an ulp.
    """
    err = mse(prediction, target)
    if err <= 0.0:
        return float(cap)
    return float(min(cap, -10.0 * np.log10(err)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 2D Gaussian kernel, separable outer product."""
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _windowed_mean(image, kernel):
    windows = np.lib.stride_tricks.sliding_window_view(image, kernel.shape)
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def _ssim_single(a, b, kernel):
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a * mu_a
    var_b = _windowed_mean(b * b, kernel) - mu_b * mu_b
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(prediction, target):
    """Structural similarity for (H, W) or (H, W, 3) images in [0, 1]."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    if prediction.ndim not in (2, 3):
        raise ValueError("expected an (H, W) or (H, W, C) image")
    if min(prediction.shape[0], prediction.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    kernel = gaussian_window()
    if prediction.ndim == 2:
        return _ssim_single(prediction, target, kernel)
    channels = [
        _ssim_single(prediction[:, :, c], target[:, :, c], kernel)
        for c in range(prediction.shape[2])
    ]
    return float(np.mean(channels))
