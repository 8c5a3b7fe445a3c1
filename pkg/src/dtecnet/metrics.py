"""PSNR, SSIM and display-scaled MSE on normalized images.

All three accept plain arrays or sandbox ``Image`` objects and can exclude
metal pixels from scoring (the default for evaluation; pass
``exclude_mask=None`` to score everything).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(x) -> np.ndarray:
    return np.asarray(getattr(x, "pixels", x), dtype=np.float64)


def _pair(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b, scale: float = 255.0, exclude_mask=None) -> float:
    """Mean squared error after multiplying both images by ``scale``."""
    a, b = _pair(a, b)
    d = (scale * (a - b)) ** 2
    if exclude_mask is not None:
        d = d[~np.asarray(exclude_mask, dtype=bool)]
    return float(d.mean())


def psnr(a, b, peak: float = 1.0, exclude_mask=None) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical images."""
    err = mse(a, b, scale=1.0, exclude_mask=exclude_mask)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / err))


def _gaussian_window(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def ssim(a, b, data_range: float = 1.0, exclude_mask=None) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Local statistics are computed only where the full window fits; the map
    is averaged over that interior region.
    """
    a, b = _pair(a, b)
    radius = SSIM_WINDOW // 2
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    kernel = _gaussian_window(radius, SSIM_SIGMA)

    def smooth(x):
        y = ndimage.convolve1d(x, kernel, axis=0)
        y = ndimage.convolve1d(y, kernel, axis=1)
        return y[radius:-radius, radius:-radius]

    mu_a = smooth(a)
    mu_b = smooth(b)
    va = smooth(a * a) - mu_a * mu_a
    vb = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2))

    if exclude_mask is not None:
        keep = ~np.asarray(exclude_mask, dtype=bool)[radius:-radius, radius:-radius]
        if not keep.any():
            raise ValueError("exclude_mask removes the entire scoring region")
        return float(s[keep].mean())
    return float(s.mean())
