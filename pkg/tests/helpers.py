"""Shared test utilities: projection-loss gradient checks for layers."""

import numpy as np

from scenesed.nn.gradcheck import finite_difference_check


def layer_grad_check(layer, x, train=True, seed=0, step=1e-5, check_input=True):
    """Finite-difference check of a layer via a fixed random projection loss.

    loss = sum(r * layer.forward(x)) for a fixed r, so the analytic gradients
    are backward(r) for the input and the accumulated parameter grads.
    Returns the max relative error over all checked coordinates.
    """
    rng = np.random.default_rng(seed)
    y = layer.forward(x, train)
    r = rng.standard_normal(y.shape)

    for p in layer.params():
        p.zero_grad()
    dx = layer.backward(r)
    analytic = [dx] + [p.grad.copy() for p in layer.params()]
    arrays = [x] + [p.value for p in layer.params()]
    if not check_input:
        analytic = analytic[1:]
        arrays = arrays[1:]

    def f():
        return float(np.sum(r * layer.forward(x, train)))

    return finite_difference_check(f, arrays, analytic, step=step)
