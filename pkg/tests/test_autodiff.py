"""Finite-difference checks for every autodiff op, plus graph mechanics."""

import numpy as np
import pytest

from wxdiff import autodiff as ad
from wxdiff.autodiff import Tensor

from conftest import assert_grad_close, finite_difference_grad


def param(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def check_op(make_scalar, x0, rtol=1e-4):
    """Compare analytic grad of make_scalar(Tensor) against central differences."""
    t = param(x0)
    out = make_scalar(t)
    out.backward()

    def f(x):
        return make_scalar(Tensor(np.asarray(x, dtype=np.float64))).item()

    fd = finite_difference_grad(f, np.asarray(x0, dtype=np.float64))
    assert_grad_close(t.grad, fd, rtol=rtol)


class TestElementwiseOps:
    def test_add_broadcast(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((1, 4))
        ta, tb = param(a), param(b)
        out = ad.tsum(ad.add(ta, tb) * 2.0)
        out.backward()
        assert np.allclose(ta.grad, 2.0 * np.ones((3, 4)))
        assert np.allclose(tb.grad, 2.0 * 3 * np.ones((1, 4)))

    def test_mul(self, rng):
        x0 = rng.standard_normal((2, 3))
        c = rng.standard_normal((2, 3))
        check_op(lambda t: ad.tsum(ad.mul(t, c) * 0.7), x0)

    def test_mul_both_sides(self, rng):
        a, b = param(rng.standard_normal(5)), param(rng.standard_normal(5))
        out = ad.tsum(a * b)
        out.backward()
        assert np.allclose(a.grad, b.data)
        assert np.allclose(b.grad, a.data)

    def test_power(self, rng):
        x0 = rng.uniform(0.5, 2.0, size=(3, 3))
        check_op(lambda t: ad.tsum(t**3), x0)

    def test_quadratic_exact(self):
        # d/dx sum(x^2) = 2x, exact in float64
        x = param([1.5, -2.0, 0.25])
        ad.tsum(x**2).backward()
        assert np.array_equal(x.grad, 2.0 * x.data)

    def test_exp(self, rng):
        x0 = rng.standard_normal((2, 4))
        check_op(lambda t: ad.tsum(ad.exp(t)), x0)

    def test_absolute(self, rng):
        x0 = rng.standard_normal(10)
        x0[np.abs(x0) < 0.01] = 0.5  # keep away from the kink
        check_op(lambda t: ad.tsum(ad.absolute(t)), x0)

    def test_relu(self, rng):
        x0 = rng.standard_normal(20)
        x0[np.abs(x0) < 0.01] = 0.5
        check_op(lambda t: ad.tsum(ad.relu(t)), x0)

    def test_sigmoid(self, rng):
        check_op(lambda t: ad.tsum(ad.sigmoid(t)), rng.standard_normal((3, 3)))

    def test_tanh(self, rng):
        check_op(lambda t: ad.tsum(ad.tanh(t)), rng.standard_normal((3, 3)))

    def test_clip01_gradient_mask(self):
        x = param([-0.5, 0.25, 0.75, 1.5])
        ad.tsum(ad.clip01(x)).backward()
        assert np.array_equal(x.grad, [0.0, 1.0, 1.0, 0.0])

    def test_division_by_tensor_rejected(self):
        with pytest.raises(TypeError):
            param([1.0]) / param([2.0])


class TestReductionsAndShape:
    def test_tsum_axis(self, rng):
        x0 = rng.standard_normal((2, 3, 4))
        check_op(lambda t: ad.tsum(ad.tsum(t, axis=1) ** 2), x0)

    def test_tmean_matches_manual(self, rng):
        x = param(rng.standard_normal((4, 5)))
        ad.tmean(x).backward()
        assert np.allclose(x.grad, np.full((4, 5), 1.0 / 20))

    def test_tmean_axis_keepdims(self, rng):
        x0 = rng.standard_normal((2, 3, 2, 2))
        check_op(lambda t: ad.tsum(ad.tmean(t, axis=(2, 3), keepdims=True) ** 2), x0)

    def test_reshape(self, rng):
        x0 = rng.standard_normal((2, 6))
        check_op(lambda t: ad.tsum(ad.reshape(t, (3, 4)) ** 2), x0)

    def test_concat_channels(self, rng):
        a = param(rng.standard_normal((1, 2, 3, 3)))
        b = param(rng.standard_normal((1, 3, 3, 3)))
        out = ad.concat_channels([a, b])
        assert out.shape == (1, 5, 3, 3)
        ad.tsum(out * out).backward()
        assert np.allclose(a.grad, 2 * a.data)
        assert np.allclose(b.grad, 2 * b.data)


class TestConv2d:
    def test_forward_matches_scipy(self, rng):
        from scipy.signal import correlate2d

        x = rng.standard_normal((2, 3, 5, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        for n in range(2):
            for co in range(4):
                ref = b[co] + sum(
                    correlate2d(x[n, ci], w[co, ci], mode="same") for ci in range(3)
                )
                assert np.allclose(out[n, co], ref, atol=1e-10)

    def test_grad_x(self, rng):
        w = rng.standard_normal((2, 2, 3, 3))
        x0 = rng.standard_normal((1, 2, 4, 4))
        check_op(lambda t: ad.tsum(ad.conv2d(t, w) ** 2), x0)

    def test_grad_w(self, rng):
        x = rng.standard_normal((2, 2, 4, 4))
        w0 = rng.standard_normal((3, 2, 3, 3))
        check_op(lambda t: ad.tsum(ad.conv2d(x, t) ** 2), w0)

    def test_grad_b(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((2, 2, 1, 1))
        check_op(lambda t: ad.tsum(ad.conv2d(x, w, t) ** 2), rng.standard_normal(2))

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError):
            ad.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestPoolingAndLinear:
    def test_avg_pool2_forward(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = ad.avg_pool2(Tensor(x)).data
        assert np.allclose(out[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_avg_pool2_grad(self, rng):
        check_op(
            lambda t: ad.tsum(ad.avg_pool2(t) ** 2), rng.standard_normal((1, 2, 4, 4))
        )

    def test_avg_pool2_odd_rejected(self):
        with pytest.raises(ValueError):
            ad.avg_pool2(np.zeros((1, 1, 3, 4)))

    def test_upsample2_round_trip(self, rng):
        x = rng.standard_normal((1, 1, 3, 3))
        up = ad.upsample2(Tensor(x)).data
        assert np.array_equal(up[0, 0, ::2, ::2], x[0, 0])
        assert np.array_equal(ad.avg_pool2(Tensor(up)).data, x)

    def test_upsample2_grad(self, rng):
        check_op(
            lambda t: ad.tsum(ad.upsample2(t) ** 2), rng.standard_normal((1, 2, 3, 3))
        )

    def test_linear_grads(self, rng):
        x = rng.standard_normal((4, 3))
        w0 = rng.standard_normal((3, 2))
        b0 = rng.standard_normal(2)
        check_op(lambda t: ad.tsum(ad.linear(x, t, b0) ** 2), w0)
        check_op(lambda t: ad.tsum(ad.linear(x, w0, t) ** 2), b0)
        check_op(lambda t: ad.tsum(ad.linear(t, w0, b0) ** 2), x)


class TestGraphMechanics:
    def test_detached_input_gets_no_grad(self, rng):
        x = param(rng.standard_normal(4))
        frozen = x.detach()
        out = ad.tsum(frozen * 3.0)
        out.backward()
        assert x.grad is None
        assert frozen.grad is None

    def test_grad_accumulates_over_reuse(self):
        x = param([2.0])
        out = ad.tsum(x * x + x)  # d/dx (x^2 + x) = 2x + 1
        out.backward()
        assert np.allclose(x.grad, [5.0])

    def test_backward_requires_scalar(self):
        x = param([1.0, 2.0])
        with pytest.raises(RuntimeError):
            (x * 2.0).backward()

    def test_shared_subgraph_visited_once(self):
        x = param([3.0])
        y = x * 2.0
        out = ad.tsum(y + y)  # 4x
        out.backward()
        assert np.allclose(x.grad, [4.0])

    def test_dtype_follows_input(self):
        x = Tensor(np.zeros((2, 2), dtype=np.float32), requires_grad=True)
        out = ad.sigmoid(x)
        assert out.dtype == np.float32
