"""
Tests for the dual-domain objective
"""

import numpy as np
import pytest

from src.errors import ModelError
from src.losses import (
    fft_magnitude_loss,
    mse_loss,
    orthonormal_fft2,
    ssim_index,
    ssim_loss,
    total_loss,
)
from src.schemas import LossWeights


def _finite_difference_check(fn, recon, target, rng, count=20, step=1e-5):
    _, grad = fn(recon, target)
    for _ in range(count):
        idx = tuple(rng.integers(0, s) for s in recon.shape)
        saved = recon[idx]
        recon[idx] = saved + step
        up = fn(recon, target)[0]
        recon[idx] = saved - step
        down = fn(recon, target)[0]
        recon[idx] = saved
        numeric = (up - down) / (2 * step)
        assert abs(grad[idx] - numeric) <= 1e-3 * max(abs(grad[idx]), abs(numeric)) + 1e-9, (idx, grad[idx], numeric)


class TestMSE:

    def test_identical_is_zero(self, rng):
        x = rng.random((3, 8, 8))
        value, grad = mse_loss(x, x)
        assert value == 0.0 and not np.any(grad)

    def test_constant_images(self):
        value, _ = mse_loss(np.full((3, 4, 4), 0.2), np.full((3, 4, 4), 0.7))
        assert value == pytest.approx(0.25, abs=1e-15)

    def test_matches_elementwise_oracle(self, rng):
        a, b = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
        oracle = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert abs(mse_loss(a, b)[0] - oracle) < 1e-12
        assert mse_loss(a, b)[0] == mse_loss(b, a)[0]

    def test_gradient(self, rng):
        _finite_difference_check(mse_loss, rng.random((3, 8, 8)), rng.random((3, 8, 8)), rng)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ModelError):
            mse_loss(rng.random((3, 8, 8)), rng.random((3, 8, 4)))


class TestFFTMagnitude:

    def test_parseval(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            h, w = rng.integers(8, 65, size=2)
            img = rng.random((h, w))
            energy = np.sum(np.abs(orthonormal_fft2(img)) ** 2)
            assert abs(energy - np.sum(img ** 2)) <= 1e-6 * np.sum(img ** 2)

    def test_identical_is_zero(self, rng):
        x = rng.random((3, 16, 16))
        assert fft_magnitude_loss(x, x)[0] == 0.0

    def test_constant_images_dc_bin(self):
        value, _ = fft_magnitude_loss(np.full((16, 16), 0.2), np.full((16, 16), 0.7))
        assert value == pytest.approx(0.03125, abs=1e-12)

    def test_direct_dft_oracle(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        k = np.arange(8)
        dft = np.exp(-2j * np.pi * np.outer(k, k) / 8) / np.sqrt(8)
        oracle = np.mean(np.abs(np.abs(dft @ a @ dft.T) - np.abs(dft @ b @ dft.T)))
        assert abs(fft_magnitude_loss(a, b)[0] - oracle) < 1e-12

    def test_circular_shift_invariance(self, rng):
        img = rng.random((3, 16, 16))
        shifted = np.roll(img, shift=(5, -3), axis=(-2, -1))
        assert fft_magnitude_loss(shifted, img)[0] < 1e-12

    def test_gradient(self, rng):
        _finite_difference_check(fft_magnitude_loss, rng.random((3, 8, 8)), rng.random((3, 8, 8)), rng)

    def test_symmetric(self, rng):
        a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        assert fft_magnitude_loss(a, b)[0] == pytest.approx(fft_magnitude_loss(b, a)[0], abs=1e-15)


class TestSSIM:

    def test_identical_is_zero(self, rng):
        x = rng.random((3, 16, 16))
        assert ssim_loss(x, x)[0] == pytest.approx(0.0, abs=1e-12)

    def test_constant_windows(self):
        value, _ = ssim_loss(np.full((16, 16), 0.5), np.full((16, 16), 0.6))
        expected = 1 - (2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
        assert value == pytest.approx(expected, abs=1e-10)
        assert value == pytest.approx(0.01639, abs=1e-5)

    def test_bounds(self, rng):
        for _ in range(10):
            value = ssim_loss(rng.random((2, 12, 12)), rng.random((2, 12, 12)))[0]
            assert 0.0 <= value <= 2.0
            assert -1.0 <= ssim_index(rng.random((12, 12)), rng.random((12, 12))) <= 1.0

    def test_symmetric(self, rng):
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        assert ssim_loss(a, b)[0] == pytest.approx(ssim_loss(b, a)[0], abs=1e-12)
        assert ssim_index(a[0], b[0]) == pytest.approx(ssim_index(b[0], a[0]), abs=1e-12)

    def test_too_small(self, rng):
        with pytest.raises(ModelError):
            ssim_loss(rng.random((10, 10)), rng.random((10, 10)))

    def test_gradient(self, rng):
        _finite_difference_check(ssim_loss, rng.random((2, 14, 14)), rng.random((2, 14, 14)), rng)


class TestTotalLoss:

    def test_mse_only_equals_mse(self, rng):
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        breakdown, grad = total_loss(a, b, LossWeights(w_mse=1, w_fft=0, w_ssim=0))
        value, mse_grad = mse_loss(a, b)
        assert breakdown.total == value and breakdown.fft == 0.0 and breakdown.ssim == 0.0
        assert np.array_equal(grad, mse_grad)

    def test_all_zero_weights_forbidden(self):
        with pytest.raises(ValueError):
            LossWeights(w_mse=0, w_fft=0, w_ssim=0)

    def test_skipped_terms_never_evaluated(self, rng, monkeypatch):
        def boom(*_):
            raise AssertionError("SSIM evaluated with zero weight")

        monkeypatch.setattr("src.losses.ssim_loss", boom)
        total_loss(rng.random((3, 8, 8)), rng.random((3, 8, 8)), LossWeights(w_mse=1, w_fft=1, w_ssim=0))

    def test_weighted_gradient(self, rng):
        weights = LossWeights(w_mse=1.0, w_fft=1.0, w_ssim=0.0)

        def fn(recon, target):
            breakdown, grad = total_loss(recon, target, weights)
            return breakdown.total, grad

        _finite_difference_check(fn, rng.random((3, 8, 8)), rng.random((3, 8, 8)), rng)
