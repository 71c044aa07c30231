"""Weight initialization helpers shared by the block parameter factories."""

import numpy as np

from .tensor import Tensor


def kaiming_uniform(rng, shape, fan_in):
    """He-style uniform init with bound sqrt(6 / fan_in)."""
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape))


def zeros(shape):
    return Tensor(np.zeros(shape))


def ones(shape):
    return Tensor(np.ones(shape))


def full(shape, value):
    return Tensor(np.full(shape, float(value)))
