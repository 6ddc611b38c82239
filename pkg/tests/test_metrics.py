import math

import numpy as np
import pytest

from rectiflow.errors import DomainError, ShapeMismatchError
from rectiflow.metrics import PSNR_SENTINEL, psnr, ssim


def rand_image(shape=(3, 16, 16), seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(np.float32)


class TestPsnr:
    def test_identical_returns_sentinel(self):
        x = rand_image()
        assert psnr(x, x) == PSNR_SENTINEL

    def test_uniform_offset(self):
        x = np.full((3, 8, 8), 100 / 255, dtype=np.float32)
        y = np.full((3, 8, 8), 110 / 255, dtype=np.float32)
        expected = 20 * math.log10(255 / 10)
        assert psnr(x, y) == pytest.approx(expected, abs=1e-3)

    def test_zero_vs_one(self):
        a = np.zeros((3, 4, 4), dtype=np.float32)
        b = np.ones((3, 4, 4), dtype=np.float32)
        assert psnr(a, b) == pytest.approx(0.0, abs=1e-9)

    def test_symmetry(self):
        a, b = rand_image(seed=1), rand_image(seed=2)
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)

    def test_nonnegative_on_unit_range(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = rng.uniform(0, 1, (3, 6, 6)).astype(np.float32)
            b = rng.uniform(0, 1, (3, 6, 6)).astype(np.float32)
            assert psnr(a, b) >= 0.0

    def test_shape_contract(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 5, 5)))


class TestSsim:
    def test_identical_is_one(self):
        x = rand_image()
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_constant_vs_same_constant(self):
        x = np.full((3, 16, 16), 0.4, dtype=np.float32)
        assert ssim(x, x.copy()) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_checkerboard_scores_low(self):
        yy, xx = np.mgrid[0:24, 0:24]
        board = ((yy // 2 + xx // 2) % 2).astype(np.float32)
        img = np.repeat(board[None], 3, axis=0)
        assert ssim(1.0 - img, img) < 0.2

    def test_symmetry(self):
        a, b = rand_image(seed=3), rand_image(seed=4)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-6)

    def test_bounded(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            a = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
            b = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_window_larger_than_image(self):
        with pytest.raises(DomainError):
            ssim(rand_image((3, 8, 8)), rand_image((3, 8, 8)))

    def test_grayscale_input_accepted(self):
        a = rand_image((1, 16, 16), seed=7)
        assert ssim(a, a) == pytest.approx(1.0)
