import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

import reference as ref
from dgsr import data_synth, images, metrics
from dgsr.data_synth import DegradationParams, DegradationVector, ParamRanges
from dgsr.errors import InputError


def fixed_image(size=64, seed=3):
    return data_synth.generate_texture(seed)[:size, :size]


class TestDegrade:
    def test_zero_degradation_is_pure_bicubic(self):
        hr = fixed_image()
        lr, label = data_synth.degrade(hr, DegradationParams(0.0, 0.0, seed=5))
        expected = images.clamp_image(images.bicubic_resize(hr, 16, 16))
        assert np.array_equal(lr, expected)
        assert (label.d_n, label.d_b) == (0.0, 0.0)

    def test_maxima_map_to_unit_label(self):
        hr = fixed_image()
        params = DegradationParams(
            blur_sigma=data_synth.DEFAULT_BLUR_SIGMA_MAX,
            noise_sigma=data_synth.DEFAULT_NOISE_SIGMA_MAX,
            seed=1,
        )
        _, label = data_synth.degrade(hr, params)
        assert (label.d_n, label.d_b) == (1.0, 1.0)

    def test_matches_reference_pipeline(self):
        hr = fixed_image()
        blur = 0.5 * data_synth.DEFAULT_BLUR_SIGMA_MAX
        noise = 0.25 * data_synth.DEFAULT_NOISE_SIGMA_MAX
        lr, label = data_synth.degrade(hr, DegradationParams(blur, noise, seed=123))
        lr_ref = ref.degrade_ref(hr, blur, noise, 4, 123)
        assert np.abs(lr - lr_ref).max() < 1e-6
        assert label.d_n == pytest.approx(0.25)
        assert label.d_b == pytest.approx(0.5)

    def test_deterministic_given_seed(self):
        hr = fixed_image()
        params = DegradationParams(1.3, 0.07, seed=99)
        lr1, _ = data_synth.degrade(hr, params)
        lr2, _ = data_synth.degrade(hr, params)
        assert np.array_equal(lr1, lr2)

    def test_output_in_range_and_shape(self):
        hr = fixed_image()
        lr, _ = data_synth.degrade(hr, DegradationParams(2.0, 0.2, seed=0))
        assert lr.shape == (16, 16, 3)
        assert lr.min() >= -1.0 and lr.max() <= 1.0

    def test_dimension_not_divisible_raises(self):
        hr = np.zeros((30, 32, 3), dtype=np.float32)
        with pytest.raises(InputError):
            data_synth.degrade(hr, DegradationParams(0.0, 0.0))

    def test_negative_sigma_raises(self):
        with pytest.raises(InputError):
            DegradationParams(-0.1, 0.0)
        with pytest.raises(InputError):
            DegradationParams(0.0, -0.1)

    def test_noise_monotonicity_fixed_seed(self):
        hr = fixed_image()
        clean, _ = data_synth.degrade(hr, DegradationParams(1.0, 0.0, seed=7))
        prev = 0.0
        for sigma in (0.02, 0.05, 0.1, 0.15):
            noisy, _ = data_synth.degrade(hr, DegradationParams(1.0, sigma, seed=7))
            msd = float(np.mean((noisy - clean) ** 2))
            assert msd > prev
            prev = msd


class TestUpscale:
    def test_scale_one_is_identity(self):
        lr = fixed_image(16)
        out = data_synth.upscale_lr(lr, 1)
        assert np.array_equal(out, lr)

    def test_constant_preserved(self):
        lr = np.full((12, 12, 3), -0.41, dtype=np.float32)
        out = data_synth.upscale_lr(lr, 4)
        assert out.shape == (48, 48, 3)
        assert np.abs(out - (-0.41)).max() < 1e-6

    def test_matches_reference_bicubic(self):
        rng = np.random.default_rng(11)
        lr = rng.uniform(-1, 1, size=(32, 32, 3)).astype(np.float32)
        mine = data_synth.upscale_lr(lr, 4)
        theirs = np.clip(ref.bicubic_resize_ref(lr, 128, 128), -1, 1)
        assert np.abs(mine - theirs).max() < 1e-6

    def test_invalid_scale(self):
        with pytest.raises(InputError):
            data_synth.upscale_lr(fixed_image(16), 0)

    def test_round_trip_band_limited(self):
        # downsample/upsample of a heavily blurred image stays close
        hr = images.clamp_image(images.gaussian_blur(data_synth.generate_texture(4), 3.0))
        lr = images.clamp_image(images.bicubic_resize(hr, 32, 32))
        up = data_synth.upscale_lr(lr, 4)
        assert metrics.psnr_y(images.quantize(up), images.quantize(hr)) >= 30.0


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestMakeDataset:
    def test_zero_items_rejected(self, tmp_path):
        with pytest.raises(InputError):
            data_synth.make_dataset(tmp_path / "d", n=0)

    def test_same_seed_byte_identical(self, tmp_path):
        data_synth.make_dataset(tmp_path / "a", n=6, seed=42)
        data_synth.make_dataset(tmp_path / "b", n=6, seed=42)
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    def test_label_mean_near_midpoint(self, tmp_path):
        ds = data_synth.make_dataset(tmp_path / "big", n=1000, seed=3)
        d_n = np.array([it.d_n for it in ds.items])
        d_b = np.array([it.d_b for it in ds.items])
        assert abs(d_n.mean() - 0.5) < 0.05
        assert abs(d_b.mean() - 0.5) < 0.05

    def test_empty_source_directory(self, tmp_path):
        empty = tmp_path / "src"
        empty.mkdir()
        with pytest.raises(InputError):
            data_synth.make_dataset(tmp_path / "d", n=2, hr_source=empty)

    def test_directory_source_center_crop(self, tmp_path):
        src = tmp_path / "imgs"
        src.mkdir()
        big = data_synth.generate_texture(0, size=160)
        images.save_png(src / "one.png", big)
        ds = data_synth.make_dataset(tmp_path / "d", n=2, hr_source=src, seed=0)
        assert ds.hr(0).shape == (128, 128, 3)

    def test_manifest_contents(self, small_dataset):
        manifest = json.loads((small_dataset.root / "manifest.json").read_text())
        assert manifest["format"] == "dgsr-dataset"
        assert manifest["pipeline_version"] == data_synth.PIPELINE_VERSION
        assert "param_ranges" in manifest
        item = manifest["items"][0]
        for key in ("d_n", "d_b", "blur_sigma", "noise_sigma", "seed"):
            assert key in item

    def test_label_consistency_invertible(self, small_dataset):
        ranges = small_dataset.param_ranges
        for it in small_dataset.items[:10]:
            assert it.d_n == pytest.approx(it.noise_sigma / ranges.noise_sigma_max)
            assert it.d_b == pytest.approx(it.blur_sigma / ranges.blur_sigma_max)

    def test_load_round_trip(self, small_dataset):
        again = data_synth.load_dataset(small_dataset.root)
        assert len(again) == len(small_dataset)
        assert np.array_equal(again.hr(0), small_dataset.hr(0))


class TestDegradationVector:
    def test_clamped(self):
        d = DegradationVector(d_n=1.7, d_b=-0.3)
        assert (d.d_n, d.d_b) == (1.0, 0.0)

    def test_ranges_dict_round_trip(self):
        r = ParamRanges(blur_sigma=(0.5, 2.0), noise_sigma_max=0.1)
        again = ParamRanges.from_dict(r.to_dict())
        assert again == r
