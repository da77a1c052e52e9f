import numpy as np
import pytest


def numerical_gradient(f, x, eps=1e-5):
    """Central finite differences of a scalar function w.r.t. array x,
    perturbing x in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    return float(np.max(np.abs(analytic - numeric) /
                        np.maximum(np.abs(numeric), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
