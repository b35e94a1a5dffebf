import math

import numpy as np
import numpy.testing as npt
import pytest

from scenesed.errors import NumericalError
from scenesed.nn.layers import Param
from scenesed.nn.optim import RAdam


def scalar_radam_trajectory(grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                            theta0=1.0):
    """Independent scalar re-implementation of the update equations."""
    theta = theta0
    m = v = 0.0
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        rho = rho_inf - 2.0 * t * beta2 ** t / (1.0 - beta2 ** t)
        if rho > 4.0:
            v_hat = math.sqrt(v / (1.0 - beta2 ** t))
            rect = math.sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf)
                             / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
            theta -= lr * rect * m_hat / (v_hat + eps)
        else:
            theta -= lr * m_hat
        out.append(theta)
    return out


def test_zero_gradient_is_fixed_point():
    p = Param("w", np.array([1.0, -2.0, 3.0]))
    opt = RAdam([p])
    for _ in range(10):
        p.zero_grad()
        opt.step()
    npt.assert_array_equal(p.value, [1.0, -2.0, 3.0])


def test_step_one_takes_momentum_branch():
    # rho_1 = rho_inf - 2*beta2/(1-beta2) = 1 for any beta2, so the first
    # steps are momentum-only until rho_t grows past 4
    opt = RAdam([Param("w", np.zeros(1))], beta2=0.999)
    assert opt.rho_t(1) == pytest.approx(1.0)
    assert not opt.rectified(1)
    assert not opt.rectified(4)
    assert opt.rectified(5)  # with beta2=0.999 the adaptive step starts at t=5

    p = Param("w", np.array([1.0]))
    opt = RAdam([p], lr=0.01)
    p.grad[...] = 2.0
    opt.step()
    # momentum branch: theta -= lr * m_hat, and m_hat equals the gradient at t=1
    npt.assert_allclose(p.value, [1.0 - 0.01 * 2.0], rtol=1e-15)


def test_constant_gradient_decreases_and_matches_oracle():
    steps = 100
    g = 0.37
    p = Param("w", np.array([1.0]))
    opt = RAdam([p], lr=1e-3)
    seen = []
    for _ in range(steps):
        p.grad[...] = g
        opt.step()
        seen.append(float(p.value[0]))
    # strictly decreasing for a positive constant gradient
    values = [1.0] + seen
    assert all(b < a for a, b in zip(values, values[1:]))
    expected = scalar_radam_trajectory([g] * steps, lr=1e-3)
    npt.assert_allclose(seen, expected, rtol=1e-12)


def test_random_gradients_match_oracle():
    rng = np.random.default_rng(8)
    grads = rng.standard_normal(60).tolist()
    p = Param("w", np.array([0.5]))
    opt = RAdam([p], lr=3e-3, beta1=0.8, beta2=0.99)
    seen = []
    for g in grads:
        p.grad[...] = g
        opt.step()
        seen.append(float(p.value[0]))
    expected = scalar_radam_trajectory(grads, lr=3e-3, beta1=0.8, beta2=0.99,
                                       theta0=0.5)
    npt.assert_allclose(seen, expected, rtol=1e-12)


def test_non_finite_gradient_raises():
    p = Param("w", np.array([1.0]))
    opt = RAdam([p])
    p.grad[...] = np.nan
    with pytest.raises(NumericalError):
        opt.step()


def test_parameters_stay_finite_under_large_gradients():
    p = Param("w", np.array([1.0]))
    opt = RAdam([p], lr=0.1)
    for _ in range(50):
        p.grad[...] = 1e6
        opt.step()
        assert np.isfinite(p.value).all()
