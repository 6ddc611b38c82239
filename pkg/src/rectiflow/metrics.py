"""Full-reference image quality metrics on [0,1] float images."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeMismatchError

PSNR_SENTINEL = 99.0
_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def psnr(pred: np.ndarray, ref: np.ndarray) -> float:
    """10*log10(1/MSE) on the [0,1] scale, capped at the 99 dB sentinel."""
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"psnr shapes {pred.shape} vs {ref.shape}")
    mse = float(np.mean((pred.astype(np.float64) - ref.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(10.0 * math.log10(1.0 / mse), PSNR_SENTINEL)


def _to_gray(x: np.ndarray) -> np.ndarray:
    if x.ndim == 3:
        if x.shape[0] == 3:
            return sum(w * x[i] for i, w in enumerate(_LUMA_WEIGHTS))
        if x.shape[0] == 1:
            return x[0]
        raise ShapeMismatchError(f"expected 1 or 3 channels, got {x.shape}")
    return x


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _local_mean(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = sliding_window_view(x, window.shape)
    return np.einsum("hwij,ij->hw", views, window)


def ssim(pred: np.ndarray, ref: np.ndarray, window: int = 11,
         k1: float = 0.01, k2: float = 0.03, sigma: float = 1.5) -> float:
    """Mean local SSIM with a Gaussian window; RGB is reduced to luminance."""
    if pred.shape != ref.shape:
        raise ShapeMismatchError(f"ssim shapes {pred.shape} vs {ref.shape}")
    a = _to_gray(np.asarray(pred, dtype=np.float64))
    b = _to_gray(np.asarray(ref, dtype=np.float64))
    if min(a.shape) < window:
        raise DomainError(f"image {a.shape} smaller than ssim window {window}")
    win = _gaussian_window(window, sigma)
    mu_a = _local_mean(a, win)
    mu_b = _local_mean(b, win)
    var_a = _local_mean(a * a, win) - mu_a ** 2
    var_b = _local_mean(b * b, win) - mu_b ** 2
    cov = _local_mean(a * b, win) - mu_a * mu_b
    c1, c2 = k1 ** 2, k2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
