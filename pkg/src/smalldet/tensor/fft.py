"""2-D FFT on power-of-two grids with tape-integrated gradients.

The transform is an iterative radix-2 decimation-in-time FFT applied along
the last two axes. ``fft2`` zero-pads the spatial extents up to the next
power of two and returns the spectrum as a pair of real tensors (real and
imaginary parts); ``ifft2`` applies the 1/(H*W)-normalized inverse and
returns the real part, optionally cropped back to smaller extents.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import Tensor, record


def next_pow2(n):
    if n < 1:
        raise ValueError(f"extent must be positive, got {n}")
    return 1 if n == 1 else 1 << (n - 1).bit_length()


@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


def _fft_last(a, inverse):
    """Radix-2 FFT along the last axis (extent must be a power of two)."""
    n = a.shape[-1]
    if n & (n - 1):
        raise ValueError(f"FFT extent must be a power of two, got {n}")
    a = a[..., _bit_reversal(n)]
    if n == 1:
        return a
    sign = 1.0 if inverse else -1.0
    lead = a.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m).astype(a.dtype)
        blocks = a.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    if inverse:
        a = a / n
    return a


def _fft2_array(a, inverse):
    b = _fft_last(a, inverse)
    b = _fft_last(np.swapaxes(b, -1, -2), inverse)
    return np.ascontiguousarray(np.swapaxes(b, -1, -2))


def _cdtype(real_dt):
    return np.result_type(real_dt, np.complex64)


@dataclass
class ComplexGrid:
    """A spectrum held as two same-shaped real tensors."""

    re: Tensor
    im: Tensor

    @property
    def shape(self):
        return self.re.shape


def fft2(x):
    """Forward 2-D FFT of x[N,C,H,W], zero-padded to power-of-two extents.

    Returns a ComplexGrid of shape [N,C,Hf,Wf]. Gradients flow through both
    parts back to the unpadded input.
    """
    xv = x.data
    if xv.ndim != 4:
        raise ValueError(f"fft2: input must be 4-D, got rank {xv.ndim}")
    n, c, h, w = xv.shape
    hf, wf = next_pow2(h), next_pow2(w)
    xp = xv if (hf == h and wf == w) else np.pad(
        xv, ((0, 0), (0, 0), (0, hf - h), (0, wf - w))
    )
    cdt = _cdtype(xv.dtype)
    f = _fft2_array(xp.astype(cdt), inverse=False)
    re = Tensor._wrap(np.ascontiguousarray(f.real))
    im = Tensor._wrap(np.ascontiguousarray(f.imag))

    def backward(g_re, g_im):
        # d/dx of a real function of the spectrum: forward-transform the
        # conjugated upstream gradient, keep the real part, drop the pad.
        g = (g_re - 1j * g_im).astype(cdt, copy=False)
        d = _fft2_array(g, inverse=False).real
        return (np.ascontiguousarray(d[:, :, :h, :w]),)

    record("fft2", (x,), (re, im), backward)
    return ComplexGrid(re, im)


def ifft2(grid, out_hw=None):
    """Inverse 2-D FFT of a ComplexGrid; returns the real part.

    ``out_hw`` optionally crops the top-left (h, w) window, undoing the
    padding applied by ``fft2``. Normalization is 1/(Hf*Wf) so that
    ``ifft2(fft2(x), x.shape[2:])`` recovers x.
    """
    re, im = grid.re, grid.im
    if re.data.shape != im.data.shape:
        raise ValueError(
            f"ifft2: part shapes differ, {re.data.shape} vs {im.data.shape}"
        )
    if re.data.ndim != 4:
        raise ValueError(f"ifft2: spectrum must be 4-D, got rank {re.data.ndim}")
    n, c, hf, wf = re.data.shape
    if (hf & (hf - 1)) or (wf & (wf - 1)):
        raise ValueError(
            f"ifft2: spectrum extents must be powers of two, got {hf}x{wf}"
        )
    if out_hw is None:
        h, w = hf, wf
    else:
        h, w = out_hw
        if not (1 <= h <= hf and 1 <= w <= wf):
            raise ValueError(
                f"ifft2: crop {h}x{w} outside spectrum extents {hf}x{wf}"
            )
    cdt = _cdtype(re.data.dtype)
    f = (re.data + 1j * im.data).astype(cdt, copy=False)
    y = _fft2_array(f, inverse=True).real
    out = Tensor._wrap(np.ascontiguousarray(y[:, :, :h, :w]))

    def backward(g):
        gp = g if (h == hf and w == wf) else np.pad(
            g, ((0, 0), (0, 0), (0, hf - h), (0, wf - w))
        )
        wg = _fft2_array(gp.astype(cdt, copy=False), inverse=True)
        return (np.ascontiguousarray(wg.real), np.ascontiguousarray(-wg.imag))

    record("ifft2", (re, im), (out,), backward)
    return out
