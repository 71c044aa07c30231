"""Downsampling and fusion blocks for the feature pyramid.

``space_to_depth`` rearranges each 2x2 spatial block into four channel
groups (lossless 2x downsampling), followed by a standard conv in
``spdcconv_forward``. The median-frequency fusion block combines a pooling
gate (average + max + median statistics through a shared MLP) with two
frequency-domain attention stages: a dual-path per-channel spectrum
weighting and a per-bin spectrum weighting, each under a residual skip.
"""

from dataclasses import dataclass

import numpy as np

from .initializers import full, kaiming_uniform, ones, zeros
from .tensor import ComplexGrid, Tensor, fft2, ifft2, next_pow2, ops
from .tensor.core import record


def space_to_depth(x):
    """Rearrange x[N,C,H,W] into [N,4C,H/2,W/2].

    Channel groups are, in order: even rows / even cols, odd rows / even
    cols, even rows / odd cols, odd rows / odd cols. Every input element
    appears exactly once in the output.
    """
    xv = x.data
    if xv.ndim != 4:
        raise ValueError(f"space_to_depth: input must be 4-D, got rank {xv.ndim}")
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ValueError(f"space_to_depth: extents must be even, got {h}x{w}")
    parts = (
        xv[:, :, 0::2, 0::2],
        xv[:, :, 1::2, 0::2],
        xv[:, :, 0::2, 1::2],
        xv[:, :, 1::2, 1::2],
    )
    out = Tensor._wrap(np.ascontiguousarray(np.concatenate(parts, axis=1)))

    def backward(g):
        dx = np.zeros_like(xv)
        dx[:, :, 0::2, 0::2] = g[:, 0 * c:1 * c]
        dx[:, :, 1::2, 0::2] = g[:, 1 * c:2 * c]
        dx[:, :, 0::2, 1::2] = g[:, 2 * c:3 * c]
        dx[:, :, 1::2, 1::2] = g[:, 3 * c:4 * c]
        return (dx,)

    record("space_to_depth", (x,), (out,), backward)
    return out


def depth_to_space(x):
    """Inverse of space_to_depth: [N,4C,H,W] -> [N,C,2H,2W], bit-exact."""
    xv = x.data
    if xv.ndim != 4:
        raise ValueError(f"depth_to_space: input must be 4-D, got rank {xv.ndim}")
    n, c4, h, w = xv.shape
    if c4 % 4:
        raise ValueError(f"depth_to_space: channels must divide by 4, got {c4}")
    c = c4 // 4
    y = np.zeros((n, c, 2 * h, 2 * w), dtype=xv.dtype)
    y[:, :, 0::2, 0::2] = xv[:, 0 * c:1 * c]
    y[:, :, 1::2, 0::2] = xv[:, 1 * c:2 * c]
    y[:, :, 0::2, 1::2] = xv[:, 2 * c:3 * c]
    y[:, :, 1::2, 1::2] = xv[:, 3 * c:4 * c]
    out = Tensor._wrap(y)

    def backward(g):
        parts = (
            g[:, :, 0::2, 0::2],
            g[:, :, 1::2, 0::2],
            g[:, :, 0::2, 1::2],
            g[:, :, 1::2, 1::2],
        )
        return (np.ascontiguousarray(np.concatenate(parts, axis=1)),)

    record("depth_to_space", (x,), (out,), backward)
    return out


@dataclass
class SPDCConvParams:
    in_channels: int
    out_channels: int
    post_conv: Tensor  # [C_out, 4C, 3, 3]
    post_bias: Tensor

    def named(self, prefix=""):
        return [
            (prefix + "post_conv.w", self.post_conv),
            (prefix + "post_conv.b", self.post_bias),
        ]


def init_spdcconv(rng, in_channels, out_channels):
    return SPDCConvParams(
        in_channels=in_channels,
        out_channels=out_channels,
        post_conv=kaiming_uniform(
            rng, (out_channels, 4 * in_channels, 3, 3), 4 * in_channels * 9
        ),
        post_bias=zeros((out_channels,)),
    )


def spdcconv_forward(x, p):
    if x.shape[1] != p.in_channels:
        raise ValueError(
            f"spdcconv expects {p.in_channels} channels, got {x.shape[1]}"
        )
    return ops.conv2d(space_to_depth(x), p.post_conv, p.post_bias,
                      stride=1, padding=1)


@dataclass
class MFFFParams:
    channels: int
    freq_hw: tuple  # padded spectrum extents the per-bin weights cover
    pool_reduce_w: Tensor
    pool_reduce_b: Tensor
    pool_expand_w: Tensor
    pool_expand_b: Tensor
    dcam_pre_w: Tensor
    dcam_pre_b: Tensor
    dcam_post_w: Tensor
    dcam_post_b: Tensor
    dcam_a_re: Tensor  # [1, C, 1, 1] per-channel scale pairs, path a
    dcam_a_im: Tensor
    dcam_b_re: Tensor  # path b
    dcam_b_im: Tensor
    fsam_pre_w: Tensor
    fsam_pre_b: Tensor
    fsam_freq: Tensor  # [1, 1, H_f, W_f] per-bin weights, shared over channels

    def named(self, prefix=""):
        return [
            (prefix + "pool.reduce.w", self.pool_reduce_w),
            (prefix + "pool.reduce.b", self.pool_reduce_b),
            (prefix + "pool.expand.w", self.pool_expand_w),
            (prefix + "pool.expand.b", self.pool_expand_b),
            (prefix + "dcam.pre.w", self.dcam_pre_w),
            (prefix + "dcam.pre.b", self.dcam_pre_b),
            (prefix + "dcam.post.w", self.dcam_post_w),
            (prefix + "dcam.post.b", self.dcam_post_b),
            (prefix + "dcam.a_re", self.dcam_a_re),
            (prefix + "dcam.a_im", self.dcam_a_im),
            (prefix + "dcam.b_re", self.dcam_b_re),
            (prefix + "dcam.b_im", self.dcam_b_im),
            (prefix + "fsam.pre.w", self.fsam_pre_w),
            (prefix + "fsam.pre.b", self.fsam_pre_b),
            (prefix + "fsam.freq", self.fsam_freq),
        ]


def init_mfff(rng, channels, hw, reduction=4):
    """Build fusion-block parameters for features of spatial size hw.

    The per-bin frequency weights live on the padded power-of-two grid.
    Path scale pairs start at 0.5 each so the two paths sum to the identity
    spectrum map; dcam_post and fsam_pre start at zero, making both
    frequency stages exact identities at init.
    """
    h, w = hw
    hidden = channels // reduction
    if hidden < 1:
        raise ValueError(
            f"reduction {reduction} leaves no hidden channels for C={channels}"
        )
    hf, wf = next_pow2(h), next_pow2(w)
    return MFFFParams(
        channels=channels,
        freq_hw=(hf, wf),
        pool_reduce_w=kaiming_uniform(rng, (hidden, channels, 1, 1), channels),
        pool_reduce_b=zeros((hidden,)),
        pool_expand_w=zeros((channels, hidden, 1, 1)),
        pool_expand_b=zeros((channels,)),
        dcam_pre_w=kaiming_uniform(rng, (channels, channels, 1, 1), channels),
        dcam_pre_b=zeros((channels,)),
        dcam_post_w=zeros((channels, channels, 1, 1)),
        dcam_post_b=zeros((channels,)),
        dcam_a_re=full((1, channels, 1, 1), 0.5),
        dcam_a_im=full((1, channels, 1, 1), 0.5),
        dcam_b_re=full((1, channels, 1, 1), 0.5),
        dcam_b_im=full((1, channels, 1, 1), 0.5),
        fsam_pre_w=zeros((channels, channels, 1, 1)),
        fsam_pre_b=zeros((channels,)),
        fsam_freq=ones((1, 1, hf, wf)),
    )


def _check_grid(x, p, name):
    hf, wf = next_pow2(x.shape[2]), next_pow2(x.shape[3])
    if (hf, wf) != tuple(p.freq_hw):
        raise ValueError(
            f"{name}: parameters cover a {p.freq_hw} spectrum but input "
            f"{x.shape[2]}x{x.shape[3]} pads to { (hf, wf) }"
        )


def mfff_pool_branch(x, p):
    """Per-channel gate from summed average/max/median global pools."""
    if x.shape[1] != p.channels:
        raise ValueError(f"pool branch expects {p.channels} channels, got {x.shape[1]}")
    s = ops.add(
        ops.add(ops.global_pool(x, "average"), ops.global_pool(x, "max")),
        ops.global_pool(x, "median"),
    )
    hidden = ops.relu(ops.conv2d(s, p.pool_reduce_w, p.pool_reduce_b))
    return ops.sigmoid(ops.conv2d(hidden, p.pool_expand_w, p.pool_expand_b))


def dcam_forward(x, p):
    """Dual-path per-channel spectrum weighting under a residual skip.

    Each path scales the real and imaginary parts with its own per-channel
    real weights; path outputs are summed in the frequency domain. Real
    scales preserve the conjugate symmetry of a real input's spectrum, so
    the inverse transform's real part carries the whole signal.
    """
    _check_grid(x, p, "dcam")
    z = ops.conv2d(x, p.dcam_pre_w, p.dcam_pre_b)
    f = fft2(z)
    re = ops.add(ops.mul(f.re, p.dcam_a_re), ops.mul(f.re, p.dcam_b_re))
    im = ops.add(ops.mul(f.im, p.dcam_a_im), ops.mul(f.im, p.dcam_b_im))
    y = ifft2(ComplexGrid(re, im), out_hw=(x.shape[2], x.shape[3]))
    return ops.add(x, ops.conv2d(y, p.dcam_post_w, p.dcam_post_b))


def fsam_forward(x, p):
    """Per-bin spectrum weighting, shared across channels, residual skip."""
    _check_grid(x, p, "fsam")
    z = ops.conv2d(x, p.fsam_pre_w, p.fsam_pre_b)
    f = fft2(z)
    re = ops.mul(f.re, p.fsam_freq)
    im = ops.mul(f.im, p.fsam_freq)
    y = ifft2(ComplexGrid(re, im), out_hw=(x.shape[2], x.shape[3]))
    return ops.add(x, y)


def mfff_forward(x, p):
    """Frequency branch (dual-path stage then per-bin stage) scaled by the
    pooling gate computed from the original input."""
    gate = mfff_pool_branch(x, p)
    y = fsam_forward(dcam_forward(x, p), p)
    return ops.mul(y, gate)
