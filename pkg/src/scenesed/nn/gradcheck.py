"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError

DEFAULT_STEP = 1e-5


def finite_difference_check(f, arrays, analytic_grads, step: float = DEFAULT_STEP) -> float:
    """Compare analytic gradients against central differences.

    ``f`` is a zero-argument callable returning a scalar that depends on the
    entries of ``arrays``; ``analytic_grads`` are the corresponding gradient
    arrays, already computed.  Each coordinate is wiggled by +/-``step`` in
    place and the relative error |analytic - numeric| / max(1, |analytic|,
    |numeric|) is accumulated.  Returns the maximum relative error over all
    coordinates.
    """
    if not np.isfinite(f()):
        raise NumericalError("function value is not finite at the probe point")
    worst = 0.0
    for arr, grad in zip(arrays, analytic_grads):
        if arr.shape != np.asarray(grad).shape:
            raise ValueError("gradient shape does not match its array")
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f()
            flat[i] = orig - step
            f_minus = f()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError("non-finite value during probing")
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = gflat[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            if err > worst:
                worst = err
    return worst
