"""Paired (HR, LR, degradation-label) data synthesis.

The degradation pipeline is blur -> bicubic x4 downsample -> additive
Gaussian noise -> clamp.  Labels are the drawn sigmas normalized by the
configured maxima, so the labels are exact and invertible up to clamping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import images
from .errors import InputError

PIPELINE_VERSION = 1

DEFAULT_BLUR_SIGMA_MAX = 4.0
DEFAULT_NOISE_SIGMA_MAX = 0.2
HR_SIZE = 128


@dataclass(frozen=True)
class DegradationVector:
    """Noise / blur extent, each clamped to [0, 1]."""

    d_n: float
    d_b: float

    def __post_init__(self):
        object.__setattr__(self, "d_n", images.clamp01(self.d_n))
        object.__setattr__(self, "d_b", images.clamp01(self.d_b))

    def as_array(self) -> np.ndarray:
        return np.array([self.d_n, self.d_b], dtype=np.float32)


@dataclass(frozen=True)
class DegradationParams:
    blur_sigma: float
    noise_sigma: float
    scale: int = 4
    seed: int = 0
    blur_sigma_max: float = DEFAULT_BLUR_SIGMA_MAX
    noise_sigma_max: float = DEFAULT_NOISE_SIGMA_MAX

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise InputError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.noise_sigma < 0:
            raise InputError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.scale < 1:
            raise InputError(f"scale must be >= 1, got {self.scale}")

    def label(self) -> DegradationVector:
        return DegradationVector(
            d_n=self.noise_sigma / self.noise_sigma_max,
            d_b=self.blur_sigma / self.blur_sigma_max,
        )


@dataclass
class ParamRanges:
    """Uniform sampling ranges for the degradation sigmas."""

    blur_sigma: tuple[float, float] = (0.0, DEFAULT_BLUR_SIGMA_MAX)
    noise_sigma: tuple[float, float] = (0.0, DEFAULT_NOISE_SIGMA_MAX)
    blur_sigma_max: float = DEFAULT_BLUR_SIGMA_MAX
    noise_sigma_max: float = DEFAULT_NOISE_SIGMA_MAX

    def to_dict(self) -> dict:
        return {
            "blur_sigma": list(self.blur_sigma),
            "noise_sigma": list(self.noise_sigma),
            "blur_sigma_max": self.blur_sigma_max,
            "noise_sigma_max": self.noise_sigma_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRanges":
        return cls(
            blur_sigma=tuple(d["blur_sigma"]),
            noise_sigma=tuple(d["noise_sigma"]),
            blur_sigma_max=d["blur_sigma_max"],
            noise_sigma_max=d["noise_sigma_max"],
        )


def degrade(hr: np.ndarray, params: DegradationParams) -> tuple[np.ndarray, DegradationVector]:
    """Synthesize an LR image and its exact degradation label from an HR image."""
    hr = images.validate_image(hr, "hr")
    h, w = hr.shape[:2]
    if h % params.scale or w % params.scale:
        raise InputError(
            f"hr dimensions {h}x{w} must be divisible by scale {params.scale}"
        )
    x = images.gaussian_blur(hr, params.blur_sigma)
    lr = images.bicubic_resize(x, h // params.scale, w // params.scale)
    lr = images.clamp_image(lr)
    rng = np.random.default_rng(params.seed)
    eta = rng.standard_normal(lr.shape)
    lr = lr + np.float32(params.noise_sigma) * eta.astype(np.float32)
    return images.clamp_image(lr), params.label()


def upscale_lr(lr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic upsample by an integer factor, clamped to [-1, 1]."""
    lr = images.validate_image(lr, "lr")
    if scale < 1:
        raise InputError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return lr.copy()
    h, w = lr.shape[:2]
    return images.clamp_image(images.bicubic_resize(lr, h * scale, w * scale))


# ---------------------------------------------------------------------------
# HR sources


def _fill_polygon(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random convex polygon mask via half-plane intersection."""
    cx, cy = rng.uniform(0.2, 0.8, size=2) * size
    radius = rng.uniform(0.1, 0.35) * size
    n_sides = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_sides))
    px = cx + radius * np.cos(angles)
    py = cy + radius * np.sin(angles)
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.ones((size, size), dtype=bool)
    for i in range(n_sides):
        x0, y0 = px[i], py[i]
        x1, y1 = px[(i + 1) % n_sides], py[(i + 1) % n_sides]
        # inside test against each edge; vertices are in CCW angular order
        mask &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return mask


def generate_texture(seed: int, size: int = HR_SIZE) -> np.ndarray:
    """Procedural HR image: oriented sinusoids + polygons + filtered noise.

    Always includes at least one sinusoid above 8 cycles/image so blur
    severity stays identifiable after downsampling.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.zeros((size, size), dtype=np.float64)

    n_waves = int(rng.integers(2, 5))
    freqs = rng.uniform(2.0, 16.0, size=n_waves)
    freqs[0] = rng.uniform(8.0, 16.0)
    for f in freqs:
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.25, 0.8)
        base += amp * np.sin(
            2 * np.pi * f * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )

    for _ in range(int(rng.integers(1, 4))):
        mask = _fill_polygon(rng, size)
        base += rng.uniform(-1.2, 1.2) * mask

    noise = rng.standard_normal((size, size))
    noise = images.gaussian_blur(noise, rng.uniform(1.5, 3.0)).astype(np.float64)
    base += rng.uniform(0.2, 0.6) * noise / (np.abs(noise).max() + 1e-9)

    base -= base.mean()
    base /= np.abs(base).max() * 1.1 + 1e-9

    img = np.zeros((size, size, 3), dtype=np.float32)
    for c in range(3):
        gain = rng.uniform(0.55, 1.0)
        offset = rng.uniform(-0.2, 0.2)
        img[:, :, c] = gain * base + offset
    return images.clamp_image(img)


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise InputError(f"source image {h}x{w} smaller than crop size {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top : top + size, left : left + size]


def _iter_hr_source(hr_source: str | Path, n: int, rng: np.random.Generator):
    """Yield n HR images from a directory or the procedural generator."""
    if hr_source == "procedural":
        for _ in range(n):
            yield generate_texture(int(rng.integers(0, 2**31 - 1)))
        return
    src = Path(hr_source)
    if not src.is_dir():
        raise InputError(f"HR source directory not found: {src}")
    files = sorted(
        p for p in src.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg"}
    )
    if not files:
        raise InputError(f"HR source directory is empty: {src}")
    for i in range(n):
        img = images.load_png(files[i % len(files)])
        yield _center_crop(img, HR_SIZE)


# ---------------------------------------------------------------------------
# On-disk dataset


@dataclass
class DatasetItem:
    idx: int
    hr_path: Path
    lr_path: Path
    d_n: float
    d_b: float
    blur_sigma: float
    noise_sigma: float
    seed: int


@dataclass
class Dataset:
    root: Path
    scale: int
    param_ranges: ParamRanges
    items: list[DatasetItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def hr(self, i: int) -> np.ndarray:
        return images.load_png(self.items[i].hr_path)

    def lr(self, i: int) -> np.ndarray:
        return images.load_png(self.items[i].lr_path)

    def label(self, i: int) -> DegradationVector:
        it = self.items[i]
        return DegradationVector(it.d_n, it.d_b)


def make_dataset(
    out_dir: str | Path,
    n: int,
    hr_source: str | Path = "procedural",
    param_ranges: ParamRanges | None = None,
    seed: int = 0,
    scale: int = 4,
) -> Dataset:
    """Write n (HR, LR, label) records; fully reproducible from seed."""
    if n <= 0:
        raise InputError(f"n must be > 0, got {n}")
    ranges = param_ranges or ParamRanges()
    out = Path(out_dir)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    (out / "lr").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    item_seeds = np.random.SeedSequence(seed).spawn(n)
    entries = []
    for i, hr in enumerate(_iter_hr_source(hr_source, n, rng)):
        blur_sigma = float(rng.uniform(*ranges.blur_sigma))
        noise_sigma = float(rng.uniform(*ranges.noise_sigma))
        item_seed = int(item_seeds[i].generate_state(1)[0])
        params = DegradationParams(
            blur_sigma=blur_sigma,
            noise_sigma=noise_sigma,
            scale=scale,
            seed=item_seed,
            blur_sigma_max=ranges.blur_sigma_max,
            noise_sigma_max=ranges.noise_sigma_max,
        )
        lr, label = degrade(hr, params)
        hr_rel = f"hr/{i:06d}.png"
        lr_rel = f"lr/{i:06d}.png"
        images.save_png(out / hr_rel, hr)
        images.save_png(out / lr_rel, lr)
        entries.append(
            {
                "idx": i,
                "hr": hr_rel,
                "lr": lr_rel,
                "d_n": label.d_n,
                "d_b": label.d_b,
                "blur_sigma": blur_sigma,
                "noise_sigma": noise_sigma,
                "seed": item_seed,
            }
        )

    manifest = {
        "format": "dgsr-dataset",
        "pipeline_version": PIPELINE_VERSION,
        "n": n,
        "seed": seed,
        "scale": scale,
        "param_ranges": ranges.to_dict(),
        "items": entries,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return load_dataset(out)


class CachedDataset:
    """Read-through cache holding dataset images in memory as uint8."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._hr: dict[int, np.ndarray] = {}
        self._lr: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.ds)

    @property
    def items(self):
        return self.ds.items

    @property
    def scale(self) -> int:
        return self.ds.scale

    def hr(self, i: int) -> np.ndarray:
        if i not in self._hr:
            self._hr[i] = images.load_png_u8(self.ds.items[i].hr_path)
        return images.dequantize(self._hr[i])

    def lr(self, i: int) -> np.ndarray:
        if i not in self._lr:
            self._lr[i] = images.load_png_u8(self.ds.items[i].lr_path)
        return images.dequantize(self._lr[i])

    def label(self, i: int) -> DegradationVector:
        return self.ds.label(i)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise InputError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    ds = Dataset(
        root=root,
        scale=manifest["scale"],
        param_ranges=ParamRanges.from_dict(manifest["param_ranges"]),
    )
    for e in manifest["items"]:
        ds.items.append(
            DatasetItem(
                idx=e["idx"],
                hr_path=root / e["hr"],
                lr_path=root / e["lr"],
                d_n=e["d_n"],
                d_b=e["d_b"],
                blur_sigma=e["blur_sigma"],
                noise_sigma=e["noise_sigma"],
                seed=e["seed"],
            )
        )
    return ds
