import warnings

import numpy as np
import pytest

from auxrecon.tensor import Tensor


def central_diff(fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d fn() / d arr by central differences; ``arr`` is perturbed in place."""
    grad = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        up = fn()
        arr[i] = old - h
        down = fn()
        arr[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def check_grads(build, *arrays, h: float = 1e-6, rtol: float = 1e-6, atol: float = 1e-8):
    """``build(*tensors) -> scalar Tensor``; compares backprop to central differences."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*leaves).backward()
    for leaf in leaves:
        def f():
            return float(build(*[Tensor(l.data) for l in leaves]).data)
        expected = central_diff(f, leaf.data, h)
        np.testing.assert_allclose(leaf.grad, expected, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_overflow():
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        yield
