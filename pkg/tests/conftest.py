import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference_grad(f, x, h=1e-3):
    """Central finite differences of a scalar function over every element of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grad_close(analytic, fd, rtol=1e-4, atol=1e-6, what=""):
    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    err = np.abs(analytic - fd)
    tol = atol + rtol * np.maximum(np.abs(analytic), np.abs(fd))
    worst = float((err - tol).max())
    assert np.all(err <= tol), f"gradient mismatch {what}: worst excess {worst:.3e}"
