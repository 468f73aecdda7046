"""
Image Quality Metrics - PSNR, SSIM and the luminance-gradient sharpness measure
All inputs are linear RGB arrays in [0, 1].
"""
import math

import numpy as np

from burstfuse.errors import DimensionMismatch

PSNR_REPORT_CAP = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) over all channels; identical images give inf"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_for_report(value: float) -> float:
    return min(value, PSNR_REPORT_CAP)


def _window_means(image: np.ndarray, size: int) -> np.ndarray:
    """Mean of every size x size window (stride 1, valid region) via an integral image"""
    integral = np.zeros((image.shape[0] + 1, image.shape[1] + 1))
    integral[1:, 1:] = image.cumsum(axis=0).cumsum(axis=1)
    sums = (integral[size:, size:] - integral[:-size, size:]
            - integral[size:, :-size] + integral[:-size, :-size])
    return sums / float(size * size)


def _ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    mu_a = _window_means(a, SSIM_WINDOW)
    mu_b = _window_means(b, SSIM_WINDOW)
    var_a = np.maximum(_window_means(a * a, SSIM_WINDOW) - mu_a * mu_a, 0.0)
    var_b = np.maximum(_window_means(b * b, SSIM_WINDOW) - mu_b * mu_b, 0.0)
    cov = _window_means(a * b, SSIM_WINDOW) - mu_a * mu_b

    numerator = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(numerator / denominator))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over 8x8 windows (stride 1) and channels"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DimensionMismatch(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape[:2]}")
    if np.array_equal(a, b):
        return 1.0
    if a.ndim == 2:
        return _ssim_plane(a, b)
    return float(np.mean([_ssim_plane(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def sharpness_metric(img: np.ndarray) -> float:
    """Mean squared forward differences of L = (R + G + B) / 3, each over the pixels where it exists"""
    img = np.asarray(img, dtype=np.float64)
    luma = img.mean(axis=2) if img.ndim == 3 else img
    gx = np.diff(luma, axis=1)
    gy = np.diff(luma, axis=0)
    return float(np.mean(gx * gx)) + float(np.mean(gy * gy))


def crop_border(img: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return img
    return img[border:-border, border:-border]
