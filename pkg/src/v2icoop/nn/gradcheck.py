"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def finite_difference_check(fn, point, step=1e-5):
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    ``fn`` maps a Tensor to a scalar Tensor using differentiable ops. For
    graphs containing a straight-through op the analytic side is the
    surrogate gradient; keep ``point`` away from the threshold so the
    forward value is locally constant in the hard branch.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = fn(x)
    analytic = tape.backward(y, [x])[0]

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(Tensor(x0)).item()
        flat[i] = orig - step
        fm = fn(Tensor(x0)).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


def check_params(fn, params, step=1e-5, max_coords=None, rng=None):
    """Finite-difference check of ``fn()`` w.r.t. every tensor in ``params``.

    ``fn`` takes no arguments and reads the parameter tensors directly.
    ``max_coords`` limits how many coordinates per tensor are probed.
    Returns the max relative error.
    """
    with Tape() as tape:
        y = fn()
    grads = tape.backward(y, params)
    worst = 0.0
    items = params.items() if isinstance(params, dict) else enumerate(params)
    for key, p in items:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        g = grads[key].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(g[i] - num) / max(1.0, abs(num)))
    return worst
