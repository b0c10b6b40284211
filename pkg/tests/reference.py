"""Straight-line reference implementations used as independent test oracles.

Everything here is written for clarity over speed: explicit loops, float64,
no reuse of the package's vectorized code paths.
"""

import numpy as np


def cubic_weight(t, a=-0.5):
    t = abs(float(t))
    if t <= 1.0:
        return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    if t < 2.0:
        return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return 0.0


def mirror(i, n):
    # reflect at pixel edges: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2
    while i < 0 or i >= n:
        if i < 0:
            i = -1 - i
        else:
            i = 2 * n - 1 - i
    return i


def resize_axis_1d(values, n_out):
    """Bicubic resample of a 1-D sequence to n_out samples."""
    values = np.asarray(values, dtype=np.float64)
    n_in = len(values)
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    support = 2.0 * fscale
    out = np.zeros(n_out, dtype=np.float64)
    for j in range(n_out):
        center = (j + 0.5) * scale - 0.5
        lo = int(np.ceil(center - support))
        hi = int(np.floor(center + support))
        wsum = 0.0
        acc = 0.0
        for i in range(lo, hi + 1):
            w = cubic_weight((i - center) / fscale)
            acc += w * values[mirror(i, n_in)]
            wsum += w
        out[j] = acc / wsum
    return out


def bicubic_resize_ref(img, out_h, out_w):
    """Rows-then-columns bicubic resize of an (H, W, C) array."""
    img = np.asarray(img, dtype=np.float64)
    h, w, c = img.shape
    tmp = np.zeros((out_h, w, c), dtype=np.float64)
    for x in range(w):
        for ch in range(c):
            tmp[:, x, ch] = resize_axis_1d(img[:, x, ch], out_h)
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for y in range(out_h):
        for ch in range(c):
            out[y, :, ch] = resize_axis_1d(tmp[y, :, ch], out_w)
    return out


def gaussian_blur_ref(img, sigma):
    """Separable Gaussian blur with the same kernel/truncation convention."""
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    radius = max(1, int(np.ceil(3.0 * sigma)))
    kernel = np.array(
        [np.exp(-0.5 * (k / sigma) ** 2) for k in range(-radius, radius + 1)]
    )
    kernel /= kernel.sum()
    h, w, c = img.shape
    tmp = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                acc = 0.0
                for k in range(-radius, radius + 1):
                    acc += kernel[k + radius] * img[mirror(y + k, h), x, ch]
                tmp[y, x, ch] = acc
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                acc = 0.0
                for k in range(-radius, radius + 1):
                    acc += kernel[k + radius] * tmp[y, mirror(x + k, w), ch]
                out[y, x, ch] = acc
    return out


def degrade_ref(hr, blur_sigma, noise_sigma, scale, seed):
    """Blur -> bicubic downsample -> additive Gaussian noise -> clamp."""
    hr = np.asarray(hr, dtype=np.float64)
    h, w, _ = hr.shape
    x = gaussian_blur_ref(hr, blur_sigma)
    lr = bicubic_resize_ref(x, h // scale, w // scale)
    lr = np.clip(lr, -1.0, 1.0)
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(lr.shape)
    lr = lr + noise_sigma * eta
    return np.clip(lr, -1.0, 1.0)


def psnr_y_ref(a, b):
    """PSNR on the BT.601 luma of two uint8 RGB images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ya = 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]
    yb = 0.299 * b[:, :, 0] + 0.587 * b[:, :, 1] + 0.114 * b[:, :, 2]
    mse = np.mean((ya - yb) ** 2)
    if mse == 0:
        return 100.0
    return min(10.0 * np.log10(255.0**2 / mse), 100.0)


def ssim_y_ref(a, b):
    """Windowed SSIM on luma, 11x11 Gaussian window, direct summation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ya = 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]
    yb = 0.299 * b[:, :, 0] + 0.587 * b[:, :, 1] + 0.114 * b[:, :, 2]
    win = 11
    sig = 1.5
    half = win // 2
    g = np.zeros((win, win))
    for i in range(win):
        for j in range(win):
            g[i, j] = np.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sig**2))
    g /= g.sum()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    h, w = ya.shape
    vals = []
    for y in range(h - win + 1):
        for x in range(w - win + 1):
            pa = ya[y : y + win, x : x + win]
            pb = yb[y : y + win, x : x + win]
            mu_a = np.sum(g * pa)
            mu_b = np.sum(g * pb)
            var_a = np.sum(g * pa * pa) - mu_a**2
            var_b = np.sum(g * pb * pb) - mu_b**2
            cov = np.sum(g * pa * pb) - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))


def dglora_forward_ref(W, A, B, C, x):
    """Dense-matrix evaluation of (W + A C B) x."""
    W = np.asarray(W, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return W @ x + A @ (C @ (B @ x))


def bce_with_logits_ref(logit, target):
    """Numerically plain binary cross-entropy on a single logit."""
    p = 1.0 / (1.0 + np.exp(-float(logit)))
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))


def gan_losses_ref(real_logits, fake_logits, positive_mask):
    """Per-sample BCE summation over heads, divided by batch size.

    real_logits / fake_logits: (K, B) arrays of per-head scalar logits.
    """
    real_logits = np.asarray(real_logits, dtype=np.float64)
    fake_logits = np.asarray(fake_logits, dtype=np.float64)
    k, batch = real_logits.shape
    g = 0.0
    d = 0.0
    for head in range(k):
        for i in range(batch):
            if not positive_mask[i]:
                continue
            g += bce_with_logits_ref(fake_logits[head, i], 1.0)
            d += bce_with_logits_ref(real_logits[head, i], 1.0)
            d += bce_with_logits_ref(fake_logits[head, i], 0.0)
    return g / batch, d / batch
