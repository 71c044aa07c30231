"""Tensor substrate: tape autodiff, ops, power-of-two FFT, grad checking."""

from . import ops
from .core import (
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    debug_enabled,
    get_precision,
    precision,
    real_dtype,
    reset_grads,
    set_debug,
    set_precision,
)
from .fft import ComplexGrid, fft2, ifft2, next_pow2
from .gradcheck import grad_check

__all__ = [
    "ComplexGrid",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "backward",
    "debug_enabled",
    "fft2",
    "get_precision",
    "grad_check",
    "ifft2",
    "next_pow2",
    "ops",
    "precision",
    "real_dtype",
    "reset_grads",
    "set_debug",
    "set_precision",
]
