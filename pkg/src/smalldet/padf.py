"""Detail-focus backbone block.

Composes a partial convolution (3x3 conv over the first C_conv channels,
identity on the rest), a channel-attention stage (3x3 conv gated by a
squeeze-excite style channel gate), and a spatial-attention stage (1x1 conv
gated by a 7x7 conv over stacked channel-mean/max maps) under a residual
skip. The gate-final layers and the closing 1x1 conv are zero-initialized
so a fresh block is the identity map.
"""

from dataclasses import dataclass

from .initializers import kaiming_uniform, zeros
from .tensor import Tensor, ops


@dataclass
class PConvParams:
    channels_total: int
    channels_conv: int
    partial_ratio: float
    kernel: Tensor  # [C_conv, C_conv, 3, 3]

    def named(self, prefix=""):
        return [(prefix + "kernel", self.kernel)]


@dataclass
class PATChannelParams:
    conv3_w: Tensor  # [C, C, 3, 3]
    conv3_b: Tensor
    reduce_w: Tensor  # [C_hidden, C, 1, 1]
    reduce_b: Tensor
    expand_w: Tensor  # [C, C_hidden, 1, 1]
    expand_b: Tensor
    reduction: int

    def named(self, prefix=""):
        return [
            (prefix + "conv3.w", self.conv3_w),
            (prefix + "conv3.b", self.conv3_b),
            (prefix + "reduce.w", self.reduce_w),
            (prefix + "reduce.b", self.reduce_b),
            (prefix + "expand.w", self.expand_w),
            (prefix + "expand.b", self.expand_b),
        ]


@dataclass
class PATSpatialParams:
    conv1_w: Tensor  # [C, C, 1, 1]
    conv1_b: Tensor
    gate_w: Tensor  # [1, 2, 7, 7]
    gate_b: Tensor

    def named(self, prefix=""):
        return [
            (prefix + "conv1.w", self.conv1_w),
            (prefix + "conv1.b", self.conv1_b),
            (prefix + "gate.w", self.gate_w),
            (prefix + "gate.b", self.gate_b),
        ]


@dataclass
class PADFBlockParams:
    pconv: PConvParams
    pat_ch: PATChannelParams
    pat_sp: PATSpatialParams
    residual: bool = True

    @property
    def channels(self):
        return self.pconv.channels_total

    def named(self, prefix=""):
        out = self.pconv.named(prefix + "pconv.")
        out += self.pat_ch.named(prefix + "pat_ch.")
        out += self.pat_sp.named(prefix + "pat_sp.")
        return out


def init_pconv(rng, channels, partial_ratio=0.25):
    c_conv = max(1, int(round(partial_ratio * channels)))
    if c_conv > channels:
        raise ValueError(
            f"partial ratio {partial_ratio} asks for {c_conv} conv channels, "
            f"only {channels} available"
        )
    kernel = kaiming_uniform(rng, (c_conv, c_conv, 3, 3), c_conv * 9)
    return PConvParams(channels, c_conv, partial_ratio, kernel)


def init_pat_ch(rng, channels, reduction=4):
    hidden = channels // reduction
    if hidden < 1:
        raise ValueError(
            f"reduction {reduction} leaves no hidden channels for C={channels}"
        )
    return PATChannelParams(
        conv3_w=kaiming_uniform(rng, (channels, channels, 3, 3), channels * 9),
        conv3_b=zeros((channels,)),
        reduce_w=kaiming_uniform(rng, (hidden, channels, 1, 1), channels),
        reduce_b=zeros((hidden,)),
        expand_w=zeros((channels, hidden, 1, 1)),
        expand_b=zeros((channels,)),
        reduction=reduction,
    )


def init_pat_sp(rng, channels):
    # conv1 starts at zero so the whole block output is zero under the skip;
    # it revives on the first step because its gradient is gate * upstream.
    return PATSpatialParams(
        conv1_w=zeros((channels, channels, 1, 1)),
        conv1_b=zeros((channels,)),
        gate_w=zeros((1, 2, 7, 7)),
        gate_b=zeros((1,)),
    )


def init_padf(rng, channels, partial_ratio=0.25, reduction=4, residual=True):
    return PADFBlockParams(
        pconv=init_pconv(rng, channels, partial_ratio),
        pat_ch=init_pat_ch(rng, channels, reduction),
        pat_sp=init_pat_sp(rng, channels),
        residual=residual,
    )


def pconv_forward(x, p):
    """Convolve channels [0, C_conv) with a 3x3 stride-1 pad-1 kernel; pass
    channels [C_conv, C) through untouched."""
    c = x.shape[1]
    if c != p.channels_total:
        raise ValueError(f"pconv expects {p.channels_total} channels, got {c}")
    if p.channels_conv > c:
        raise ValueError(f"C_conv={p.channels_conv} exceeds C={c}")
    head = ops.slice_channels(x, 0, p.channels_conv)
    y = ops.conv2d(head, p.kernel, stride=1, padding=1)
    if p.channels_conv == c:
        return y
    rest = ops.slice_channels(x, p.channels_conv, c)
    return ops.concat_channels([y, rest])


def pconv_flops(p, h, w):
    """Multiply-accumulate count of the partial 3x3 conv path on an HxW map."""
    return 9 * h * w * p.channels_conv ** 2


def full_conv_flops(channels, h, w, kernel=3):
    """MAC count of a dense conv with equal in/out channels, for comparison."""
    return kernel * kernel * h * w * channels ** 2


def pat_ch_forward(x, p):
    """3x3 conv scaled by a per-channel gate derived from the input's
    global average pool: sigmoid(expand(relu(reduce(gap(x)))))."""
    y = ops.conv2d(x, p.conv3_w, p.conv3_b, stride=1, padding=1)
    s = ops.global_pool(x, "average")
    hidden = ops.relu(ops.conv2d(s, p.reduce_w, p.reduce_b))
    gate = ops.sigmoid(ops.conv2d(hidden, p.expand_w, p.expand_b))
    return ops.mul(y, gate)


def pat_sp_forward(x, p):
    """1x1 conv scaled by a per-pixel gate: sigmoid of a 7x7 conv over the
    stacked channel-mean and channel-max maps."""
    y = ops.conv2d(x, p.conv1_w, p.conv1_b)
    stats = ops.concat_channels([ops.channel_mean(x), ops.channel_max(x)])
    gate = ops.sigmoid(ops.conv2d(stats, p.gate_w, p.gate_b, stride=1, padding=3))
    return ops.mul(y, gate)


def padf_forward(x, p):
    y = pconv_forward(x, p.pconv)
    y = pat_ch_forward(y, p.pat_ch)
    y = pat_sp_forward(y, p.pat_sp)
    return ops.add(x, y) if p.residual else y
