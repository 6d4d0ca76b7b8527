import numpy as np
import pytest

from framediff.metrics import psnr, ssim, to_8bit_scale


def _rand_img(rng, shape=(3, 32, 32)):
    return rng.uniform(-1, 1, shape).astype(np.float32)


def test_psnr_identical_is_capped():
    img = _rand_img(np.random.default_rng(0))
    assert psnr(img, img) == 100.0


def test_psnr_uniform_one_level_error():
    img = np.zeros((3, 16, 16), np.float32)
    off = img + np.float32(2.0 / 255.0)  # exactly one 8-bit level
    assert psnr(img, off) == pytest.approx(20 * np.log10(255.0), abs=1e-3)
    assert 20 * np.log10(255.0) == pytest.approx(48.1308, abs=1e-4)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_to_8bit_scale_range():
    assert to_8bit_scale(np.array(-1.0)) == pytest.approx(0.0)
    assert to_8bit_scale(np.array(1.0)) == pytest.approx(255.0)


def test_ssim_self_is_one():
    img = _rand_img(np.random.default_rng(1))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_ssim_far_shift_is_low():
    rng = np.random.default_rng(2)
    img = rng.uniform(-1, 1, (3, 48, 48)).astype(np.float32)
    shifted = np.roll(img, 16, axis=2)
    assert ssim(img, shifted) < 0.9


def test_ssim_sensitive_to_noise():
    rng = np.random.default_rng(3)
    img = _rand_img(rng)
    noisy = np.clip(img + 0.2 * rng.standard_normal(img.shape).astype(np.float32), -1, 1)
    val = ssim(img, noisy)
    assert 0.0 < val < 0.99


def test_ssim_constant_images():
    a = np.zeros((3, 16, 16), np.float32)
    assert ssim(a, a) == pytest.approx(1.0)


def test_ssim_uses_gaussian_window_at_high_resolution():
    rng = np.random.default_rng(4)
    img = rng.uniform(-1, 1, (1, 130, 130)).astype(np.float32)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)
