import numpy as np

from .tensor import Tensor


def conv_weight(rng, k, cin, cout, name=None):
    """He-uniform kernel, bound sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / (k * k * cin))
    return Tensor(rng.uniform(-bound, bound, size=(k, k, cin, cout)), requires_grad=True, name=name)


def zeros(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def constant(shape, value, name=None):
    return Tensor(np.full(shape, float(value)), requires_grad=True, name=name)
