"""Finite-difference verification cases for every block and batched loss.

Each case rebuilds a small configuration from its own fixed stream, so runs
are reproducible. Samplers keep inputs away from the non-smooth sets (relu
zeros, pooling ties, box-loss kinks): the analytic backward pass picks one
subgradient there, while a central difference straddles the corner, so
proximity would report a false disagreement. Validators run the forward
detached and redraw until every margin holds.
"""

import numpy as np

from ..losses import BBox, FocalerParams, batched_box_loss, iou
from ..neck import (dcam_forward, fsam_forward, init_mfff, init_spdcconv,
                    mfff_forward, mfff_pool_branch, space_to_depth,
                    spdcconv_forward)
from ..padf import (init_padf, init_pat_ch, init_pat_sp, init_pconv,
                    padf_forward, pat_ch_forward, pat_sp_forward,
                    pconv_forward)
from ..tensor import (Tape, Tensor, backward, grad_check, ops, precision,
                      reset_grads)

PASS_THRESHOLD = 1e-6

_RELU_MARGIN = 5e-3
_GAP_MARGIN = 5e-3
_GRAD_FLOOR_SCALE = 3e-5
_MAX_DRAWS = 200


def _rng(case_id, seed):
    return np.random.default_rng(1_000_003 * case_id + seed)


def _signed(rng, shape, lo=0.15, hi=0.9):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _randomize(named, rng):
    for _, t in named:
        t.data = _signed(rng, t.data.shape).astype(t.data.dtype)


def _probe(rng, shape):
    return Tensor(_signed(rng, shape, 0.3, 1.1))


def _weights(rng, shape):
    return Tensor(_signed(rng, shape, 0.4, 1.0))


def _wsum(y, r):
    return ops.tsum(ops.mul(y, r))


def _relu_safe(arr):
    return bool(np.all(np.abs(arr) > _RELU_MARGIN))


def _channel_gap_safe(arr):
    """Per-pixel top-2 channel gap, for channel_max stability."""
    s = np.sort(arr, axis=1)
    return bool(np.min(s[:, -1] - s[:, -2]) > _GAP_MARGIN)


def _plane_rank_safe(arr):
    """Top-2 and middle-window order-stat gaps, for max/median pooling."""
    n, c, h, w = arr.shape
    flat = np.sort(arr.reshape(n, c, h * w), axis=2)
    if flat[..., -1:].size and np.min(flat[..., -1] - flat[..., -2]) <= _GAP_MARGIN:
        return False
    mid = (h * w) // 2
    lo = max(0, mid - 2)
    hi = min(h * w, mid + 2)
    window = flat[..., lo:hi]
    return bool(np.min(np.diff(window, axis=2)) > _GAP_MARGIN)


def _grads_resolved(f, wrt):
    """All tape gradients clear the finite-difference noise floor.

    The check metric divides by ``max(|a|, |fd|, floor)``; an element whose
    true gradient happens to cancel to ~0 would then measure FD roundoff
    (which scales with the output magnitude) against the floor. Such draws
    say nothing about correctness, so the builders skip them.
    """
    with Tape():
        out = f()
        backward(out)
    limit = _GRAD_FLOOR_SCALE * max(1.0, abs(out.item()))
    ok = all(np.min(np.abs(t.grad)) > limit for t in wrt)
    reset_grads(wrt)
    return ok


def _pat_ch_hidden(x, p):
    s = ops.global_pool(x, "average")
    return ops.conv2d(s, p.reduce_w, p.reduce_b).data


def _accept(name, draw):
    for _ in range(_MAX_DRAWS):
        f, wrt, ok = draw()
        if ok and _grads_resolved(f, wrt):
            return f, wrt
    raise RuntimeError(f"gradsuite: no well-conditioned draw for {name!r}")


def _damp_gate(p, factor=0.15):
    # The 7x7 gate conv sums ~100 taps; left at unit scale it saturates the
    # sigmoid and flattens every gradient behind it.
    p.gate_w.data = p.gate_w.data * factor
    p.gate_b.data = p.gate_b.data * factor


def _case_pconv(seed):
    rng = _rng(1, seed)

    def draw():
        p = init_pconv(rng, 4)
        _randomize(p.named(), rng)
        x = _probe(rng, (1, 4, 6, 6))
        r = _weights(rng, (1, 4, 6, 6))
        return lambda: _wsum(pconv_forward(x, p), r), [x, p.kernel], True

    return _accept("pconv", draw)


def _case_pat_ch(seed):
    rng = _rng(2, seed)

    def draw():
        p = init_pat_ch(rng, 4)
        _randomize(p.named(), rng)
        x = _probe(rng, (1, 4, 6, 6))
        r = _weights(rng, (1, 4, 6, 6))
        wrt = [x] + [t for _, t in p.named()]
        ok = _relu_safe(_pat_ch_hidden(x, p))
        return lambda: _wsum(pat_ch_forward(x, p), r), wrt, ok

    return _accept("pat_ch", draw)


def _case_pat_sp(seed):
    rng = _rng(3, seed)

    def draw():
        p = init_pat_sp(rng, 4)
        _randomize(p.named(), rng)
        _damp_gate(p)
        x = _probe(rng, (1, 4, 6, 6))
        r = _weights(rng, (1, 4, 6, 6))
        wrt = [x] + [t for _, t in p.named()]
        ok = _channel_gap_safe(x.data)
        return lambda: _wsum(pat_sp_forward(x, p), r), wrt, ok

    return _accept("pat_sp", draw)


def _case_padf(seed):
    rng = _rng(4, seed)

    def draw():
        p = init_padf(rng, 4)
        _randomize(p.named(), rng)
        _damp_gate(p.pat_sp)
        x = _probe(rng, (1, 4, 6, 6))
        r = _weights(rng, (1, 4, 6, 6))
        wrt = [x] + [t for _, t in p.named()]
        ok = _relu_safe(_pat_ch_hidden(pconv_forward(x, p.pconv), p.pat_ch))
        if ok:
            z = pat_ch_forward(pconv_forward(x, p.pconv), p.pat_ch)
            ok = _channel_gap_safe(z.data)
        return lambda: _wsum(padf_forward(x, p), r), wrt, ok

    return _accept("padf", draw)


def _case_space_to_depth(seed):
    rng = _rng(5, seed)

    def draw():
        x = _probe(rng, (1, 2, 6, 6))
        r = _weights(rng, (1, 8, 3, 3))
        return lambda: _wsum(space_to_depth(x), r), [x], True

    return _accept("space_to_depth", draw)


def _case_spdcconv(seed):
    rng = _rng(6, seed)

    def draw():
        p = init_spdcconv(rng, 2, 4)
        _randomize(p.named(), rng)
        x = _probe(rng, (1, 2, 6, 6))
        r = _weights(rng, (1, 4, 3, 3))
        wrt = [x] + [t for _, t in p.named()]
        return lambda: _wsum(spdcconv_forward(x, p), r), wrt, True

    return _accept("spdcconv", draw)


def _mfff_params(rng, channels=4, hw=(4, 4)):
    p = init_mfff(rng, channels, hw)
    _randomize(p.named(), rng)
    return p


def _pool_hidden(x, p):
    s = ops.add(
        ops.add(ops.global_pool(x, "average"), ops.global_pool(x, "max")),
        ops.global_pool(x, "median"),
    )
    return ops.conv2d(s, p.pool_reduce_w, p.pool_reduce_b).data


def _case_pool_branch(seed):
    rng = _rng(7, seed)

    def draw():
        p = _mfff_params(rng)
        x = _probe(rng, (1, 4, 4, 4))
        r = _weights(rng, (1, 4, 1, 1))
        wrt = [x, p.pool_reduce_w, p.pool_reduce_b,
               p.pool_expand_w, p.pool_expand_b]
        ok = _plane_rank_safe(x.data) and _relu_safe(_pool_hidden(x, p))
        return lambda: _wsum(mfff_pool_branch(x, p), r), wrt, ok

    return _accept("mfff_pool_branch", draw)


def _case_dcam(seed):
    rng = _rng(8, seed)

    def draw():
        p = _mfff_params(rng)
        x = _probe(rng, (1, 4, 4, 4))
        r = _weights(rng, (1, 4, 4, 4))
        wrt = [x, p.dcam_pre_w, p.dcam_pre_b, p.dcam_post_w, p.dcam_post_b,
               p.dcam_a_re, p.dcam_a_im, p.dcam_b_re, p.dcam_b_im]
        return lambda: _wsum(dcam_forward(x, p), r), wrt, True

    return _accept("dcam", draw)


def _case_fsam(seed):
    rng = _rng(9, seed)

    def draw():
        p = _mfff_params(rng)
        x = _probe(rng, (1, 4, 4, 4))
        r = _weights(rng, (1, 4, 4, 4))
        wrt = [x, p.fsam_pre_w, p.fsam_pre_b, p.fsam_freq]
        return lambda: _wsum(fsam_forward(x, p), r), wrt, True

    return _accept("fsam", draw)


def _case_mfff(seed):
    rng = _rng(10, seed)

    def draw():
        p = _mfff_params(rng)
        x = _probe(rng, (1, 4, 4, 4))
        r = _weights(rng, (1, 4, 4, 4))
        wrt = [x] + [t for _, t in p.named()]
        ok = _plane_rank_safe(x.data) and _relu_safe(_pool_hidden(x, p))
        return lambda: _wsum(mfff_forward(x, p), r), wrt, ok

    return _accept("mfff", draw)


def _sample_box_pair(rng):
    px, py = rng.uniform(0.0, 4.0, 2)
    pw, ph = rng.uniform(1.5, 3.5, 2)
    gx = px + rng.uniform(-1.2, 1.2)
    gy = py + rng.uniform(-1.2, 1.2)
    gw, gh = rng.uniform(1.5, 3.5, 2)
    a = BBox(px, py, px + pw, py + ph)
    b = BBox(gx, gy, gx + gw, gy + gh)
    q = iou(a, b)
    ok = (
        0.08 < q < 0.85
        and abs(b.cx - a.cx) > 0.05 and abs(b.cy - a.cy) > 0.05
        and abs(a.width - b.width) > 0.05 and abs(a.height - b.height) > 0.05
        and abs(a.x1 - b.x1) > 0.02 and abs(a.x2 - b.x2) > 0.02
        and abs(a.y1 - b.y1) > 0.02 and abs(a.y2 - b.y2) > 0.02
        and min(a.x2, b.x2) - max(a.x1, b.x1) > 0.1
        and min(a.y2, b.y2) - max(a.y1, b.y1) > 0.1
    )
    return ok, a, b


def _loss_case(case_id, kind):
    def build(seed):
        rng = _rng(case_id, seed)

        def draw():
            pred_rows, gt_rows = [], []
            while len(pred_rows) < 3:
                ok, a, b = _sample_box_pair(rng)
                if not ok:
                    continue
                pred_rows.append([a.x1, a.y1, a.x2, a.y2])
                gt_rows.append([b.x1, b.y1, b.x2, b.y2])
            pred = Tensor(np.array(pred_rows))
            gt = Tensor(np.array(gt_rows))
            params = FocalerParams(0.0, 0.95)
            return lambda: batched_box_loss(pred, gt, kind, params), [pred, gt], True

        return _accept(f"loss_{kind}", draw)

    return build


CASES = (
    ("pconv", "padf", _case_pconv),
    ("pat_ch", "padf", _case_pat_ch),
    ("pat_sp", "padf", _case_pat_sp),
    ("padf", "padf", _case_padf),
    ("space_to_depth", "spdc", _case_space_to_depth),
    ("spdcconv", "spdc", _case_spdcconv),
    ("mfff_pool_branch", "mfff", _case_pool_branch),
    ("dcam", "mfff", _case_dcam),
    ("fsam", "mfff", _case_fsam),
    ("mfff", "mfff", _case_mfff),
    ("loss_giou", "loss", _loss_case(11, "giou")),
    ("loss_siou", "loss", _loss_case(12, "siou")),
    ("loss_focaler_siou", "loss", _loss_case(13, "focaler_siou")),
)

MODULE_GROUPS = ("all", "padf", "spdc", "mfff", "loss")


def run_suite(module="all", seeds=5, eps=1e-4):
    """Returns [(case name, max rel error over seeds)] for the module group."""
    if module not in MODULE_GROUPS:
        raise ValueError(f"module must be one of {MODULE_GROUPS}, got {module!r}")
    if seeds < 1:
        raise ValueError("seeds must be positive")
    results = []
    with precision("double"):
        for name, group, builder in CASES:
            if module != "all" and group != module:
                continue
            worst = 0.0
            for seed in range(seeds):
                f, wrt = builder(seed)
                worst = max(worst, grad_check(f, wrt, eps=eps))
            results.append((name, worst))
    return results
