"""PSNR/SSIM golden values and brute-force window oracles."""

import numpy as np
import pytest

from wxdiff.metrics import psnr, ssim

WIN, SIGMA, K1, K2 = 11, 1.5, 0.01, 0.03


def gaussian_kernel():
    x = np.arange(-5, 6, dtype=np.float64)
    g = np.exp(-(x * x) / (2 * SIGMA * SIGMA))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_bruteforce(a, b):
    """Reference SSIM: explicit python loop over every valid window."""
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    kern = gaussian_kernel()
    c1, c2 = K1 * K1, K2 * K2
    per_channel = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        vals = []
        for i in range(a.shape[0] - WIN + 1):
            for j in range(a.shape[1] - WIN + 1):
                px = x[i : i + WIN, j : j + WIN]
                py = y[i : i + WIN, j : j + WIN]
                mx = (kern * px).sum()
                my = (kern * py).sum()
                vx = (kern * px * px).sum() - mx * mx
                vy = (kern * py * py).sum() - my * my
                vxy = (kern * px * py).sum() - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * vxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
            # one row done
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


class TestPsnr:
    def test_uniform_offset_golden(self):
        # MSE 0.01 -> exactly 20 dB
        a = np.full((16, 16, 3), 0.5)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-6)

    def test_identical_capped(self):
        a = np.linspace(0, 1, 64).reshape(8, 8)
        assert psnr(a, a) == 100.0

    def test_cap_threshold(self):
        a = np.zeros((10, 10))
        assert psnr(a, a + 1e-6) == 100.0  # mse 1e-12 under the cap
        assert psnr(a, a + 2e-5) < 100.0

    def test_hand_computed(self):
        a = np.zeros((2, 2))
        b = np.array([[0.1, 0.0], [0.0, 0.0]])
        # mse = 0.01/4
        assert psnr(a, b) == pytest.approx(10 * np.log10(400), abs=1e-10)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (12, 12))
        b = rng.uniform(0, 1, (12, 12))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_self_similarity_exact(self, rng):
        a = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(a, a) == 1.0

    def test_checkerboard_vs_inverse_negative(self):
        a = np.indices((16, 16)).sum(axis=0) % 2 * 1.0
        b = 1.0 - a
        assert ssim(a, b) < 0.0

    def test_constant_images_c_stabilized(self):
        a = np.full((12, 12), 0.4)
        b = np.full((12, 12), 0.6)
        # zero variance: value determined by the luminance term alone
        c1 = K1 * K1
        want = (2 * 0.4 * 0.6 + c1) / (0.4**2 + 0.6**2 + c1)
        assert ssim(a, b) == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("case", range(5))
    def test_matches_bruteforce_oracle(self, case):
        rng = np.random.default_rng(900 + case)
        shape = [(13, 13), (16, 12), (11, 11), (14, 14, 3), (12, 15, 3)][case]
        a = rng.uniform(0, 1, shape)
        b = np.clip(a + rng.normal(0, [0.02, 0.1, 0.3, 0.05, 0.2][case], shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_bruteforce(a, b), abs=1e-6)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (14, 14))
        b = rng.uniform(0, 1, (14, 14))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 16)), np.zeros((10, 16)))

    def test_degradation_ordering(self, rng):
        # more noise, lower score
        a = rng.uniform(0.2, 0.8, (20, 20))
        small = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
        large = np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)
        assert ssim(a, small) > ssim(a, large)
