"""Image-quality metrics: PSNR and windowed SSIM."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from splatmap.optim import ShapeMismatch, _as_array
from splatmap.sampling import LUMA_WEIGHTS

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def psnr(a, b) -> float:
    """10*log10(1/MSE) for [0,1] images; capped at 99 dB for (near-)identical
    inputs."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shape {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        if img.shape[2] == 3:
            return img @ LUMA_WEIGHTS
        return img[:, :, 0]
    return img


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def ssim(a, b) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5), averaged over windows that
    fit fully inside the image; inputs are grayscale-converted first."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shape {x.shape} vs {y.shape}")
    gx, gy = _to_gray(x), _to_gray(y)
    if gx.shape[0] < SSIM_WINDOW or gx.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    conv = lambda img: ndimage.convolve(img, kernel, mode="constant")
    half = SSIM_WINDOW // 2
    crop = (slice(half, gx.shape[0] - half), slice(half, gx.shape[1] - half))

    mu_x = conv(gx)[crop]
    mu_y = conv(gy)[crop]
    mu_xx = conv(gx * gx)[crop]
    mu_yy = conv(gy * gy)[crop]
    mu_xy = conv(gx * gy)[crop]

    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y

    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))
