"""Image array conventions and resampling primitives.

An image is a float32 numpy array of shape (H, W, 3) with values in [-1, 1].
8-bit images are uint8 arrays of shape (H, W, 3).  Torch model code uses
(B, 3, H, W) tensors; the converters at the bottom bridge the two layouts.

Resampling uses a separable Catmull-Rom bicubic kernel (a = -0.5) with
mirror padding at pixel edges; when downscaling, the kernel is stretched by
the scale ratio so the filter acts as an antialiasing low-pass.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from .errors import InputError

_BICUBIC_A = -0.5


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    a = _BICUBIC_A
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _mirror_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Reflect out-of-range indices at pixel edges (…, 1, 0 | 0, 1, …)."""
    idx = np.asarray(idx)
    period = 2 * n
    idx = np.mod(idx, period)
    idx = np.where(idx < 0, idx + period, idx)
    return np.where(idx >= n, period - 1 - idx, idx)


def _resize_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output tap indices and normalized kernel weights for one axis."""
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    support = 2.0 * fscale
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    left = np.ceil(centers - support).astype(np.int64)
    width = int(np.floor(support * 2.0)) + 2
    taps = left[:, None] + np.arange(width)[None, :]
    weights = _cubic_kernel((taps - centers[:, None]) / fscale)
    weights /= weights.sum(axis=1, keepdims=True)
    return _mirror_indices(taps, n_in), weights


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of an (H, W, C) or (H, W) array.

    Runs in float64 internally and returns float32, unclamped.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if out_h == h and out_w == w:
        out = img
    else:
        taps_r, w_r = _resize_weights(h, out_h)
        taps_c, w_c = _resize_weights(w, out_w)
        out = np.einsum("ok,okwc->owc", w_r, img[taps_r, :, :])
        out = np.einsum("ok,hokc->hoc", w_c, out[:, taps_c, :])
    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with mirror padding; sigma=0 is the identity."""
    if sigma < 0:
        raise InputError(f"blur sigma must be >= 0, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.astype(np.float32)
    radius = max(1, int(np.ceil(3.0 * sigma)))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()

    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    rows = _mirror_indices(np.arange(h)[:, None] + offsets[None, :], h)
    out = np.einsum("k,hkwc->hwc", kernel, img[rows, :, :])
    cols = _mirror_indices(np.arange(w)[:, None] + offsets[None, :], w)
    out = np.einsum("k,hwkc->hwc", kernel, out[:, cols, :])
    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def clamp01(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


def clamp_image(img: np.ndarray) -> np.ndarray:
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"{name} must have shape (H, W, 3), got {img.shape}")
    return img.astype(np.float32, copy=False)


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to uint8, rounding half away from zero."""
    v = (np.clip(img, -1.0, 1.0).astype(np.float64) + 1.0) * (255.0 / 2.0)
    return np.floor(v + 0.5).clip(0, 255).astype(np.uint8)


def dequantize(img8: np.ndarray) -> np.ndarray:
    """Map uint8 back to float32 in [-1, 1]."""
    return (img8.astype(np.float32) / 255.0) * 2.0 - 1.0


def save_png(path, img: np.ndarray) -> None:
    """Write an image as 8-bit RGB PNG; accepts float [-1,1] or uint8."""
    if img.dtype != np.uint8:
        img = quantize(img)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read an image file as float32 in [-1, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return dequantize(arr)


def load_png_u8(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float image -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()


def batch_to_tensor(imgs: np.ndarray) -> torch.Tensor:
    """(B, H, W, 3) -> (B, 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2))).float()


def from_tensor(t: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float32 image."""
    if t.ndim == 4:
        t = t[0]
    return t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)
