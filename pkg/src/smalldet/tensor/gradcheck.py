"""Central-difference gradient verification.

Runs in double precision; callers are expected to build the tensors under
``precision("double")`` as well so the forward pass matches.
"""

import numpy as np

from .core import Tape, backward, precision, reset_grads


def grad_check(f, wrt, eps=1e-4, floor=1e-8):
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar output from scratch on each call, closing over
    the tensors in ``wrt``. The error for one element is
    ``|a - fd| / max(|a|, |fd|, floor)`` where ``a`` is the tape gradient and
    ``fd`` the two-point central difference with step ``eps``.
    """
    with precision("double"):
        reset_grads(wrt)
        with Tape():
            out = f()
            backward(out)
        analytic = [np.array(t.grad, dtype=np.float64, copy=True) for t in wrt]
        reset_grads(wrt)

        worst = 0.0
        for t, a in zip(wrt, analytic):
            for idx in np.ndindex(t.data.shape):
                saved = t.data[idx]
                t.data[idx] = saved + eps
                f_plus = f().item()
                t.data[idx] = saved - eps
                f_minus = f().item()
                t.data[idx] = saved
                fd = (f_plus - f_minus) / (2.0 * eps)
                ai = float(a[idx])
                err = abs(ai - fd) / max(abs(ai), abs(fd), floor)
                worst = max(worst, err)
    return worst
