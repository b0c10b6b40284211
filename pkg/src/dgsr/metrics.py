"""Reference fidelity metrics computed on the BT.601 luma channel.

All metrics expect 8-bit RGB arrays of shape (H, W, 3); float inputs in
[-1, 1] can be converted with images.quantize first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0
PSNR_CAP = 100.0

LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


@dataclass
class MetricReport:
    psnr_y: float
    ssim_y: float
    hf_energy: float

    def to_dict(self) -> dict:
        return {"psnr_y": self.psnr_y, "ssim_y": self.ssim_y, "hf_energy": self.hf_energy}


def to_luma(img8: np.ndarray) -> np.ndarray:
    img = np.asarray(img8, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) image, got shape {img.shape}")
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if np.asarray(a).shape != np.asarray(b).shape:
        raise InputError(f"shape mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB on luma; identical inputs are capped at 100 dB."""
    _check_pair(a, b)
    mse = np.mean((to_luma(a) - to_luma(b)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(DYNAMIC_RANGE**2 / mse), PSNR_CAP))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    ax = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


def _window_filter(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-mode 2-D correlation via stride tricks."""
    k = win.shape[0]
    h, w = img.shape
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("hwij,ij->hw", view, win)


def ssim_y(a: np.ndarray, b: np.ndarray) -> float:
    """Mean windowed SSIM on luma (11x11 Gaussian window, sigma 1.5)."""
    _check_pair(a, b)
    ya = to_luma(a)
    yb = to_luma(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise InputError(
            f"image {ya.shape} smaller than SSIM window {SSIM_WINDOW}x{SSIM_WINDOW}"
        )
    win = _gaussian_window()
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_a = _window_filter(ya, win)
    mu_b = _window_filter(yb, win)
    var_a = _window_filter(ya * ya, win) - mu_a**2
    var_b = _window_filter(yb * yb, win) - mu_b**2
    cov = _window_filter(ya * yb, win) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def hf_energy(a: np.ndarray) -> float:
    """Mean absolute 3x3 Laplacian response on luma (mirror padding)."""
    y = to_luma(a)
    padded = np.pad(y, 1, mode="symmetric")
    view = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    resp = np.einsum("hwij,ij->hw", view, LAPLACIAN)
    return float(np.mean(np.abs(resp)))


def report(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(psnr_y=psnr_y(a, b), ssim_y=ssim_y(a, b), hf_energy=hf_energy(a))
