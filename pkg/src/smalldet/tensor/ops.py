"""Differentiable ops over Tensors: elementwise math, 2-D convolution,
global pooling (average / max / median), channel concat/slice, reductions,
and the gather/stack plumbing used by the dense detection head.

Broadcasting is restricted to same-rank operands where an axis of extent 1
meets a larger extent (the singleton rule); gradients sum over broadcast
axes. Scalar (python number) operands are treated as constants.
"""

import numpy as np

from .core import Tensor, record

_GRAD_EPS = 1e-30  # floor for denominators in subgradient guards


def _as_operands(a, b, name):
    """Coerce (a, b) so at least one is a Tensor; scalars become constants."""
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if not a_t and not b_t:
        raise TypeError(f"{name}: at least one operand must be a Tensor")
    av = a.data if a_t else np.asarray(a, dtype=b.data.dtype)
    bv = b.data if b_t else np.asarray(b, dtype=a.data.dtype)
    if a_t and b_t:
        _check_broadcast(av.shape, bv.shape, name)
    return av, bv, (a if a_t else None), (b if b_t else None)


def _check_broadcast(sa, sb, name):
    if sa == sb:
        return
    if len(sa) != len(sb):
        raise ValueError(f"{name}: rank mismatch {sa} vs {sb}")
    for axis, (ea, eb) in enumerate(zip(sa, sb)):
        if ea != eb and ea != 1 and eb != 1:
            raise ValueError(
                f"{name}: incompatible extents {ea} vs {eb} along axis {axis}"
            )


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast from extent 1."""
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    axes = tuple(i for i, e in enumerate(shape) if e == 1 and g.shape[i] > 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def _binary(name, a, b, fwd, bwd_a, bwd_b):
    av, bv, at, bt = _as_operands(a, b, name)
    out = Tensor._wrap(fwd(av, bv))
    inputs = [t for t in (at, bt) if t is not None]

    def backward(g):
        grads = []
        if at is not None:
            grads.append(_unbroadcast(bwd_a(g, av, bv, out.data), av.shape))
        if bt is not None:
            grads.append(_unbroadcast(bwd_b(g, av, bv, out.data), bv.shape))
        return grads

    record(name, inputs, (out,), backward)
    return out


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first operand."""
    return _binary("maximum", a, b, np.maximum,
                   lambda g, x, y, o: g * (x >= y),
                   lambda g, x, y, o: g * (y > x))


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first operand."""
    return _binary("minimum", a, b, np.minimum,
                   lambda g, x, y, o: g * (x <= y),
                   lambda g, x, y, o: g * (y < x))


def scale(a, s):
    s = float(s)
    out = Tensor._wrap(a.data * s)
    record("scale", (a,), (out,), lambda g: (g * s,))
    return out


def _sigmoid_grad(y):
    return y * (1.0 - y)


def sigmoid(a):
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    y = y.astype(x.dtype, copy=False)
    out = Tensor._wrap(y)
    record("sigmoid", (a,), (out,), lambda g: (g * _sigmoid_grad(out.data),))
    return out


def _relu_grad(x):
    return x > 0


def relu(a):
    out = Tensor._wrap(np.maximum(a.data, 0))
    x = a.data
    record("relu", (a,), (out,), lambda g: (g * _relu_grad(x),))
    return out


def exp(a):
    out = Tensor._wrap(np.exp(a.data))
    record("exp", (a,), (out,), lambda g: (g * out.data,))
    return out


def sqrt(a):
    out = Tensor._wrap(np.sqrt(a.data))

    def backward(g):
        # Subgradient guard: finite (huge) slope instead of inf at 0.
        return (g * 0.5 / np.maximum(out.data, _GRAD_EPS),)

    record("sqrt", (a,), (out,), backward)
    return out


def absolute(a):
    x = a.data
    out = Tensor._wrap(np.abs(x))
    record("abs", (a,), (out,), lambda g: (g * np.sign(x),))
    return out


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes on the closed interval (boundary
    points take the interior slope)."""
    x = a.data
    out = Tensor._wrap(np.clip(x, lo, hi))
    mask = (x >= lo) & (x <= hi)
    record("clamp", (a,), (out,), lambda g: (g * mask,))
    return out


def tsum(a):
    """Sum of all elements, as a scalar tensor."""
    out = Tensor._wrap(a.data.sum(dtype=a.data.dtype).reshape(()))
    shape = a.data.shape
    record("sum", (a,), (out,), lambda g: (np.broadcast_to(g, shape).copy(),))
    return out


def tmean(a):
    out = Tensor._wrap(a.data.mean(dtype=a.data.dtype).reshape(()))
    n = a.data.size
    shape = a.data.shape
    record("mean", (a,), (out,), lambda g: (np.broadcast_to(g / n, shape).copy(),))
    return out


# ---------------------------------------------------------------------------
# Convolution


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of x[N,C,H,W] with weight[O,C,k,k].

    Output extent is floor((H + 2*padding - k) / stride) + 1 and must be
    positive. Implemented as im2col + matmul; the backward pass scatters
    column gradients back with the matching stride.
    """
    xv, wv = x.data, weight.data
    if xv.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-D [N,C,H,W], got rank {xv.ndim}")
    if wv.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-D [O,C,k,k], got rank {wv.ndim}")
    n, c, h, w = xv.shape
    o, cw, kh, kw = wv.shape
    if kh != kw:
        raise ValueError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if cw != c:
        raise ValueError(
            f"conv2d: weight expects {cw} input channels but input has {c}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise ValueError(
            f"conv2d: bias shape {bias.data.shape} does not match {o} output channels"
        )
    s, p, k = int(stride), int(padding), kh
    if s < 1 or p < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv2d: output size {ho}x{wo} is not positive "
            f"(input {h}x{w}, kernel {k}, stride {s}, padding {p})"
        )

    cols = _im2col(xv, k, s, p, ho, wo)  # [N, C*k*k, ho*wo]
    w2 = wv.reshape(o, c * k * k)
    out_v = np.matmul(w2, cols).reshape(n, o, ho, wo)
    if bias is not None:
        out_v = out_v + bias.data.reshape(1, o, 1, 1)
    out = Tensor._wrap(np.ascontiguousarray(out_v))

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(n, o, ho * wo)
        dw = np.einsum("nol,ncl->oc", g2, cols).reshape(o, c, k, k)
        dcols = np.matmul(w2.T, g2)  # [N, C*k*k, L]
        dx = _col2im(dcols, (n, c, h, w), k, s, p, ho, wo)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    record("conv2d", inputs, (out,), backward)
    return out


def _im2col(x, k, s, p, ho, wo):
    n, c, h, w = x.shape
    if p > 0:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, ho, wo, k, k),
        strides=(sn, sc, sh * s, sw * s, sh, sw), writeable=False,
    )
    # [N, C, k, k, ho, wo] -> [N, C*k*k, ho*wo]
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(
        n, c * k * k, ho * wo
    )


def _col2im(dcols, x_shape, k, s, p, ho, wo):
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, c, k, k, ho, wo)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += dcols[:, :, ki, kj]
    return dxp[:, :, p:p + h, p:p + w] if p > 0 else dxp


# ---------------------------------------------------------------------------
# Global pooling


def global_pool(x, kind):
    """Reduce each (n, c) plane of x[N,C,H,W] to a single value.

    kinds: 'average', 'max' (gradient to the first maximum in row-major
    order), 'median' (even-sized planes take the mean of the two middle
    order statistics, gradient split half/half between them).
    """
    xv = x.data
    if xv.ndim != 4:
        raise ValueError(f"global_pool: input must be 4-D, got rank {xv.ndim}")
    n, c, h, w = xv.shape
    hw = h * w
    if hw < 1:
        raise ValueError("global_pool: empty spatial plane")
    flat = xv.reshape(n, c, hw)

    if kind == "average":
        out = Tensor._wrap(flat.mean(axis=2, dtype=xv.dtype).reshape(n, c, 1, 1))

        def backward(g):
            return (np.broadcast_to(g.reshape(n, c, 1, 1) / hw, xv.shape).copy(),)

    elif kind == "max":
        idx = flat.argmax(axis=2)
        vals = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]
        out = Tensor._wrap(vals.reshape(n, c, 1, 1))

        def backward(g):
            dflat = np.zeros_like(flat)
            np.put_along_axis(dflat, idx[..., None], g.reshape(n, c, 1), axis=2)
            return (dflat.reshape(xv.shape),)

    elif kind == "median":
        order = np.argsort(flat, axis=2, kind="stable")
        if hw % 2 == 1:
            mid = order[:, :, hw // 2]
            vals = np.take_along_axis(flat, mid[..., None], axis=2)[..., 0]

            def backward(g):
                dflat = np.zeros_like(flat)
                np.put_along_axis(dflat, mid[..., None], g.reshape(n, c, 1), axis=2)
                return (dflat.reshape(xv.shape),)

        else:
            lo = order[:, :, hw // 2 - 1]
            hi = order[:, :, hw // 2]
            v_lo = np.take_along_axis(flat, lo[..., None], axis=2)[..., 0]
            v_hi = np.take_along_axis(flat, hi[..., None], axis=2)[..., 0]
            vals = (v_lo + v_hi) / 2

            def backward(g):
                dflat = np.zeros_like(flat)
                half = g.reshape(n, c, 1) / 2
                np.put_along_axis(dflat, lo[..., None], half, axis=2)
                # add.at semantics in case both middle slots coincide (hw==1 cannot
                # happen here, but duplicated indices would otherwise overwrite)
                cur = np.take_along_axis(dflat, hi[..., None], axis=2)
                np.put_along_axis(dflat, hi[..., None], cur + half, axis=2)
                return (dflat.reshape(xv.shape),)

        out = Tensor._wrap(vals.astype(xv.dtype, copy=False).reshape(n, c, 1, 1))
    else:
        raise ValueError(f"global_pool: unknown kind {kind!r}")

    record(f"global_pool[{kind}]", (x,), (out,), backward)
    return out


def channel_mean(x):
    """Mean over the channel axis of x[N,C,H,W], keeping a singleton C."""
    xv = x.data
    c = xv.shape[1]
    out = Tensor._wrap(xv.mean(axis=1, keepdims=True, dtype=xv.dtype))
    record("channel_mean", (x,), (out,),
           lambda g: (np.broadcast_to(g / c, xv.shape).copy(),))
    return out


def channel_max(x):
    """Max over the channel axis; gradient routes to the first max channel."""
    xv = x.data
    idx = xv.argmax(axis=1)[:, None]
    out = Tensor._wrap(np.take_along_axis(xv, idx, axis=1))

    def backward(g):
        dx = np.zeros_like(xv)
        np.put_along_axis(dx, idx, g, axis=1)
        return (dx,)

    record("channel_max", (x,), (out,), backward)
    return out


# ---------------------------------------------------------------------------
# Channel concat / slice


def concat_channels(parts):
    """Concatenate [N,Ci,H,W] tensors along the channel axis."""
    if not parts:
        raise ValueError("concat_channels: empty part list")
    base = parts[0].data.shape
    for i, p in enumerate(parts[1:], start=1):
        s = p.data.shape
        if len(s) != 4 or s[0] != base[0] or s[2:] != base[2:]:
            raise ValueError(
                f"concat_channels: part {i} shape {s} does not match {base}"
            )
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(s) for s in np.split(g, splits, axis=1))

    record("concat_channels", tuple(parts), (out,), backward)
    return out


def slice_channels(x, start, stop):
    """Channels [start, stop) of x[N,C,H,W]; gradient scatters back."""
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ValueError(
            f"slice_channels: range [{start}, {stop}) invalid for {c} channels"
        )
    out = Tensor._wrap(np.ascontiguousarray(x.data[:, start:stop]))
    shape = x.data.shape

    def backward(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[:, start:stop] = g
        return (dx,)

    record("slice_channels", (x,), (out,), backward)
    return out


# ---------------------------------------------------------------------------
# Head plumbing: gathering cells, assembling coordinate matrices, BCE


def select_cells(x, n_idx, i_idx, j_idx):
    """Gather x[n, :, i, j] for each (n, i, j) triple -> [M, C]."""
    n_idx = np.asarray(n_idx, dtype=np.intp)
    i_idx = np.asarray(i_idx, dtype=np.intp)
    j_idx = np.asarray(j_idx, dtype=np.intp)
    if not (len(n_idx) == len(i_idx) == len(j_idx)):
        raise ValueError("select_cells: index arrays must share a length")
    if len(n_idx) == 0:
        raise ValueError("select_cells: empty selection")
    out = Tensor._wrap(np.ascontiguousarray(x.data[n_idx, :, i_idx, j_idx]))
    shape = x.data.shape

    def backward(g):
        dx = np.zeros(shape, dtype=g.dtype)
        np.add.at(dx, (n_idx, slice(None), i_idx, j_idx), g)
        return (dx,)

    record("select_cells", (x,), (out,), backward)
    return out


def column(x, j):
    """Column j of a 2-D tensor -> 1-D tensor."""
    if x.data.ndim != 2:
        raise ValueError(f"column: expected rank 2, got {x.data.ndim}")
    cols = x.data.shape[1]
    if not 0 <= j < cols:
        raise ValueError(f"column: index {j} out of range for {cols} columns")
    out = Tensor._wrap(np.ascontiguousarray(x.data[:, j]))
    shape = x.data.shape

    def backward(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[:, j] = g
        return (dx,)

    record("column", (x,), (out,), backward)
    return out


def stack_columns(cols):
    """Stack 1-D tensors of equal length into [M, len(cols)]."""
    if not cols:
        raise ValueError("stack_columns: empty column list")
    m = cols[0].data.shape[0]
    for c in cols:
        if c.data.ndim != 1 or c.data.shape[0] != m:
            raise ValueError("stack_columns: columns must be 1-D of equal length")
    out = Tensor._wrap(np.stack([c.data for c in cols], axis=1))

    def backward(g):
        return tuple(np.ascontiguousarray(g[:, j]) for j in range(len(cols)))

    record("stack_columns", tuple(cols), (out,), backward)
    return out


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy on raw logits (stable softplus form).

    ``targets`` is a constant array of the same shape; gradient w.r.t. the
    logits is sigmoid(z) - t.
    """
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    if t.shape != z.shape:
        raise ValueError(f"bce_with_logits: target shape {t.shape} != {z.shape}")
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor._wrap(loss.astype(z.dtype, copy=False))

    def backward(g):
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                       np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return (g * (sig - t),)

    record("bce_with_logits", (logits,), (out,), backward)
    return out
