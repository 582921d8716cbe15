"""PSNR and SSIM on unit-range images."""

import math

import numpy as np

PSNR_CAP_DB = 100.0

# Canonical SSIM constants: 11x11 Gaussian window, sigma 1.5, K1/K2 from
# the original formulation, dynamic range 1.0.
_WIN = 11
_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def psnr(a, b):
    """Peak signal-to-noise ratio in dB, capped at 100 for near-identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=_WIN, sigma=_SIGMA):
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img, kernel):
    win = kernel.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (win, win))
    return np.tensordot(view, kernel, axes=([2, 3], [0, 1]))


def _ssim_channel(x, y, kernel):
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mu_x = _windowed_mean(x, kernel)
    mu_y = _windowed_mean(y, kernel)
    sxx = _windowed_mean(x * x, kernel) - mu_x * mu_x
    syy = _windowed_mean(y * y, kernel) - mu_y * mu_y
    sxy = _windowed_mean(x * y, kernel) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Mean structural similarity over valid 11x11 windows, per channel
    then averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < _WIN:
        raise ValueError(f"images must be at least {_WIN}px on each side")
    kernel = _gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, kernel)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], kernel) for c in range(a.shape[2])]))
