"""Minimal N-D tensor with reverse-mode autodiff on an explicit tape.

Tensors wrap numpy arrays in N x C x H x W layout (row-major). Ops record
onto the innermost active ``Tape``; with no tape active they run detached.
Precision is a process-wide mode: ``single`` (float32, the training default)
or ``double`` (float64, used for gradient verification). The initial mode is
taken from the ``SMALLDET_PRECISION`` environment variable.
"""

import os
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

_MODES = ("single", "double")


class NonFiniteError(RuntimeError):
    """Raised when a NaN/Inf value is produced or passed in."""


def _read_env_mode():
    mode = os.environ.get("SMALLDET_PRECISION", "single").strip().lower()
    return mode if mode in _MODES else "single"


_precision = _read_env_mode()
_debug = False


def set_precision(mode):
    global _precision
    if mode not in _MODES:
        raise ValueError(f"precision must be one of {_MODES}, got {mode!r}")
    _precision = mode


def get_precision():
    return _precision


@contextmanager
def precision(mode):
    """Temporarily switch the numeric mode (e.g. 'double' for grad checks)."""
    old = _precision
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(old)


def set_debug(flag):
    """Enable the per-op NaN/Inf sentinel (off by default)."""
    global _debug
    _debug = bool(flag)


def debug_enabled():
    return _debug


def real_dtype():
    return np.float32 if _precision == "single" else np.float64


def complex_dtype():
    return np.complex64 if _precision == "single" else np.complex128


@dataclass
class TapeEntry:
    """One recorded op: inputs, outputs, and the rule mapping output grads
    to input grads (``None`` marks a non-differentiable input)."""

    name: str
    inputs: tuple
    outputs: tuple
    backward: object


class Tape:
    """Append-only record of ops, topologically ordered by construction.

    A tape is single-threaded: build it, run ``backward`` on a scalar output,
    then drop it. Entering a tape makes it the recording target for every op
    executed in the block.
    """

    def __init__(self):
        self.entries = []

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self
        return False


_tape_stack = []


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    """N-dimensional real array with an optional gradient buffer.

    Values are immutable by convention once the tensor participates in a
    tape; only ``grad`` is written afterwards (and parameter buffers are
    rewritten by the optimizer between tapes, never during one).
    """

    __slots__ = ("data", "grad", "tape", "node")

    def __init__(self, values, dtype=None):
        arr = np.asarray(values, dtype=dtype if dtype is not None else real_dtype())
        _validate_array(arr)
        self.data = arr
        self.grad = None
        self.tape = None
        self.node = None

    @classmethod
    def _wrap(cls, arr):
        """Wrap an op result without casting; the debug-mode finite check
        lives in ``record`` so the failure names the producing op."""
        t = cls.__new__(cls)
        if arr.size == 0 or 0 in arr.shape:
            raise ValueError(f"tensor extents must be positive, got shape {arr.shape}")
        t.data = arr
        t.grad = None
        t.tape = None
        t.node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() requires a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach_copy(self):
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    # Arithmetic sugar; the named ops live in smalldet.tensor.ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)


def _validate_array(arr):
    if arr.size == 0 or 0 in arr.shape:
        raise ValueError(f"tensor extents must be positive, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor holds NaN or Inf values")


def record(name, inputs, outputs, backward):
    """Append an op to the active tape (no-op when executing detached).

    ``backward`` receives one gradient array per output (zeros substituted
    for outputs the loss never touched) and returns one array (or ``None``)
    per input.
    """
    tape = active_tape()
    if _debug:
        for o in outputs:
            if not np.all(np.isfinite(o.data)):
                raise NonFiniteError(f"op {name!r} produced NaN/Inf values")
    if tape is None:
        return
    for t in inputs:
        if t.tape is not None and t.tape is not tape:
            raise ValueError(f"op {name!r}: input tensor belongs to a different tape")
    node = len(tape.entries)
    tape.entries.append(TapeEntry(name, tuple(inputs), tuple(outputs), backward))
    for o in outputs:
        o.tape = tape
        o.node = node


def accumulate_grad(t, g):
    if g.shape != t.data.shape:
        raise ValueError(
            f"gradient shape {g.shape} does not match tensor shape {t.data.shape}"
        )
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(root):
    """Populate grad buffers with d(root)/d(input) for every tape input.

    ``root`` must be a single-element tensor produced on a tape. Gradients
    accumulate into any pre-existing buffers; reset with ``reset_grads``.
    """
    if root.tape is None:
        raise ValueError("backward: tensor is detached (not produced on any tape)")
    if root.data.size != 1:
        raise ValueError(f"backward: root must be a scalar, shape is {root.shape}")
    accumulate_grad(root, np.ones_like(root.data))
    entries = root.tape.entries[: root.node + 1]
    for entry in reversed(entries):
        if all(o.grad is None for o in entry.outputs):
            continue
        out_grads = tuple(
            o.grad if o.grad is not None else np.zeros_like(o.data)
            for o in entry.outputs
        )
        in_grads = entry.backward(*out_grads)
        for t, g in zip(entry.inputs, in_grads):
            if g is not None:
                accumulate_grad(t, g)
    # Inputs on disconnected branches still receive their (zero) gradient.
    for entry in entries:
        for t in entry.inputs:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


def reset_grads(tensors):
    for t in tensors:
        t.grad = None
